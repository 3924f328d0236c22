"""Discretized acoustic-gravity block operator on a structured hex mesh.

The pressure lives in a continuous nodal space (shared dofs across
elements), the velocity components in a discontinuous nodal space (element
blocks).  The coupling operator pairs the pressure gradient with velocity
test functions and, skew-adjointly, the velocity with pressure-test
gradients; quadrature-point factors fold the quadrature weight and the
inverse Jacobian together, and both blocks contract the same stored factor
array on opposite sides.

Evaluation strategies:

* PA        - stored factors, one element pass per block (factors read twice)
* MF        - factors recomputed on the fly, one pass per block
* FusedPA   - stored factors, both blocks in a single pass (factors read once)
* FusedMF   - recomputed factors, single pass

Backends swap the 1D basis contractions between the plain ascending-order
scalar path and the emulated warp-MMA path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .banks import cached_conflict_free_mapping
from .counters import Counters
from .mesh import ABSORBING, BOTTOM, SURFACE, Mesh, Restriction, h1_restriction
from .mma import MmaEngine
from .tensor import (
    Basis1D,
    Tensor3,
    apply_basis_3d,
    apply_basis_transpose_3d,
    apply_gradient_3d,
    apply_gradient_transpose_3d,
)

STRATEGIES = ("PA", "MF", "FusedPA", "FusedMF")
BACKENDS = ("scalar", "mma")

# seawater defaults (SI): density, sound speed, bulk modulus K = rho * c^2
SEAWATER_RHO = 1025.0
SEAWATER_SOUND_SPEED = 1500.0
SEAWATER_BULK_MODULUS = SEAWATER_RHO * SEAWATER_SOUND_SPEED**2


class DivergenceError(FloatingPointError):
    """Time stepping produced non-finite values."""


class MassError(ValueError):
    """Lumped mass entries must be strictly positive."""


# ---------------------------------------------------------------------------
# State
# ---------------------------------------------------------------------------


@dataclass
class State:
    """Velocity component blocks (3, elements, local dofs) plus pressure dofs."""

    u: np.ndarray
    p: np.ndarray
    eta: np.ndarray | None = None

    @classmethod
    def zeros(cls, num_elements: int, num_dofs_u: int, num_p: int) -> "State":
        return cls(u=np.zeros((3, num_elements, num_dofs_u)), p=np.zeros(num_p))

    def copy(self) -> "State":
        return State(self.u.copy(), self.p.copy(), None if self.eta is None else self.eta.copy())

    def pack(self) -> np.ndarray:
        return np.concatenate([self.u.ravel(), self.p])

    def unpack_like(self, vec: np.ndarray) -> "State":
        nu = self.u.size
        return State(vec[:nu].reshape(self.u.shape).copy(), vec[nu : nu + self.p.size].copy())

    @property
    def num_dofs(self) -> int:
        return self.u.size + self.p.size

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.p)))


def state_lincomb(coeffs, states) -> State:
    """Linear combination of states (used by the time stepper)."""
    u = sum(c * s.u for c, s in zip(coeffs, states))
    p = sum(c * s.p for c, s in zip(coeffs, states))
    return State(u, p)


# ---------------------------------------------------------------------------
# Quadrature-point data
# ---------------------------------------------------------------------------


@dataclass
class QuadData:
    """Per-element quadrature factors and lumped mass diagonals.

    dmat[e, q, s, r] = weight*|J| * Jinv[s, r]; contracting over s applies
    it to reference gradients (pressure-gradient block), contracting over r
    applies the transpose (velocity block).
    """

    dmat: np.ndarray
    wdet: np.ndarray
    rho: np.ndarray
    kinv: np.ndarray
    lump_u: np.ndarray
    lump_p: np.ndarray

    @property
    def num_elements(self) -> int:
        return self.dmat.shape[0]


class GeometryErrorForElement(ValueError):
    def __init__(self, element: int):
        super().__init__(f"non-positive Jacobian determinant in element {element}")
        self.element = element


def _quad_weights_3d(basis: Basis1D) -> np.ndarray:
    w = basis.quad_weights
    return np.kron(w, np.kron(w, w))


def element_dfactors(mesh: Mesh, wdet_ref: np.ndarray) -> np.ndarray:
    """Factor array for one element of the structured mesh."""
    jinv = 1.0 / mesh.jacobian_diag
    nq3 = wdet_ref.size
    dm = np.zeros((nq3, 3, 3))
    for s in range(3):
        dm[:, s, s] = wdet_ref * jinv[s]
    return dm


def setup_quad_data(
    mesh: Mesh,
    bases: tuple[Basis1D, Basis1D],
    coefficients: tuple[float | np.ndarray, float | np.ndarray] = (1.0, 1.0),
    restriction: Restriction | None = None,
) -> QuadData:
    """Precompute weighted geometry factors and lumped mass diagonals.

    bases is (pressure basis, velocity basis); coefficients is (rho, K).
    The lumped pressure diagonal is assembled globally when a restriction is
    supplied, otherwise left element-local.
    """
    basis_p, basis_u = bases
    rho, bulk = coefficients
    nel = mesh.num_elements
    rho = np.broadcast_to(np.asarray(rho, dtype=np.float64), (nel,)).copy()
    bulk = np.broadcast_to(np.asarray(bulk, dtype=np.float64), (nel,)).copy()
    if np.any(rho <= 0) or np.any(bulk <= 0):
        raise MassError("density and bulk modulus must be positive")
    kinv = 1.0 / bulk

    detj = mesh.jacobian_det
    if detj <= 0:
        raise GeometryErrorForElement(0)
    w3 = _quad_weights_3d(basis_p)
    wdet_ref = w3 * detj
    dm_ref = element_dfactors(mesh, wdet_ref)
    nq3 = w3.size
    dmat = np.broadcast_to(dm_ref, (nel, nq3, 3, 3)).copy()
    wdet = np.broadcast_to(wdet_ref, (nel, nq3)).copy()

    # row-sum lumping: integrate each basis function against the coefficient
    lump_ref_u = apply_basis_transpose_3d(
        basis_u, Tensor3((basis_u.num_quad_1d,) * 3, wdet_ref.copy())
    ).data
    lump_ref_p = apply_basis_transpose_3d(
        basis_p, Tensor3((basis_p.num_quad_1d,) * 3, wdet_ref.copy())
    ).data
    lump_u = rho[:, None] * lump_ref_u[None, :]
    lump_p_local = kinv[:, None] * lump_ref_p[None, :]
    if restriction is not None:
        lump_p = restriction.scatter_add(lump_p_local)
    else:
        lump_p = lump_p_local
    if np.any(lump_u <= 0) or np.any(lump_p <= 0):
        raise MassError("row-sum lumping produced a non-positive entry")
    return QuadData(dmat=dmat, wdet=wdet, rho=rho, kinv=kinv, lump_u=lump_u, lump_p=lump_p)


# ---------------------------------------------------------------------------
# Face helpers (boundary terms)
# ---------------------------------------------------------------------------


def _face_local_indices(axis: int, side: int, d: int) -> np.ndarray:
    """Element-local flat indices of one face layer, in-plane order."""
    idx = np.arange(d**3).reshape((d, d, d), order="F")
    layer = 0 if side == 0 else d - 1
    if axis == 0:
        face = idx[layer, :, :]
    elif axis == 1:
        face = idx[:, layer, :]
    else:
        face = idx[:, :, layer]
    return face.ravel(order="F")


@dataclass
class _FaceBlock:
    element: int
    local_ids: np.ndarray
    area_scale: float  # product of in-plane half-extents


class BlockOperator:
    """The coupled first-order wave operator with pluggable evaluation."""

    def __init__(
        self,
        mesh: Mesh,
        order_p: int = 4,
        order_u: int = 3,
        num_quad_1d: int = 5,
        strategy: str = "PA",
        backend: str = "scalar",
        rho: float | np.ndarray = 1.0,
        bulk_modulus: float | np.ndarray = 1.0,
        coupling_scale: float = 1.0,
        absorbing: bool = False,
        surface_gravity: float | None = None,
        counters: Counters | None = None,
        mapping_resolver=None,
    ):
        if strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
        if backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}, got {backend!r}")
        self.mesh = mesh
        self.strategy = strategy
        self.backend = backend
        self.coupling_scale = float(coupling_scale)
        self.absorbing = bool(absorbing)
        self.surface_gravity = surface_gravity
        self.counters = counters if counters is not None else Counters()

        self.basis_p = Basis1D.nodal(order_p + 1, num_quad_1d)
        self.basis_u = Basis1D.nodal(order_u + 1, num_quad_1d)
        self.restriction = h1_restriction(mesh, self.basis_p.num_dofs_1d)
        self.quad = setup_quad_data(
            mesh, (self.basis_p, self.basis_u), (rho, bulk_modulus), self.restriction
        )
        self._wdet_ref = _quad_weights_3d(self.basis_p) * mesh.jacobian_det

        if backend == "mma":
            resolver = mapping_resolver or cached_conflict_free_mapping
            self.engine = MmaEngine(resolver)
        else:
            self.engine = None

        if self.absorbing or self.surface_gravity is not None:
            self._init_boundary_terms()
        if self.surface_gravity is not None:
            g = float(self.surface_gravity)
            if g <= 0:
                raise ValueError("surface gravity must be positive")
            # free-surface mass: the lumped diagonal gains the surface term
            for fb, lump2d in zip(self._surface_blocks, self._surface_lump2d):
                coef = 1.0 / (self.quad.rho[fb.element] * g)
                gids = self.restriction.gather_ids[fb.element][fb.local_ids]
                np.add.at(self.quad.lump_p, gids, coef * lump2d)

    # -- geometry factors ---------------------------------------------------

    def _dfactors(self, e: int, count: bool = True) -> np.ndarray:
        if self.strategy in ("PA", "FusedPA"):
            dm = self.quad.dmat[e]
            if count:
                self.counters.d_reads += dm.size
            return dm
        return element_dfactors(self.mesh, self._wdet_ref)

    @property
    def num_dofs_u_local(self) -> int:
        return self.basis_u.num_dofs_1d ** 3

    def zero_state(self) -> State:
        return State.zeros(self.mesh.num_elements, self.num_dofs_u_local, self.restriction.num_global)

    # -- element kernels ----------------------------------------------------

    def _pressure_to_velocity(self, p_elem: np.ndarray, e: int, dm: np.ndarray) -> np.ndarray:
        """tau block: weighted physical gradient of p tested against velocity."""
        dp = self.basis_p.num_dofs_1d
        grads = apply_gradient_3d(
            self.basis_p, Tensor3((dp, dp, dp), p_elem.copy()), self.counters, self.engine
        )
        gstack = np.stack([g.data for g in grads])  # (3, nq3)
        tstack = np.einsum("qsr,sq->rq", dm, gstack)
        q = self.basis_p.num_quad_1d
        out = np.empty((3, self.num_dofs_u_local))
        for r in range(3):
            out[r] = apply_basis_transpose_3d(
                self.basis_u, Tensor3((q, q, q), tstack[r].copy()), self.counters, self.engine
            ).data
        return out

    def _velocity_to_pressure(self, u_elem: np.ndarray, e: int, dm: np.ndarray) -> np.ndarray:
        """v block: velocity at quadrature against pressure-test gradients."""
        du = self.basis_u.num_dofs_1d
        q = self.basis_u.num_quad_1d
        uq = np.stack(
            [
                apply_basis_3d(
                    self.basis_u, Tensor3((du, du, du), u_elem[r].copy()), self.counters, self.engine
                ).data
                for r in range(3)
            ]
        )
        tstack = np.einsum("qsr,rq->sq", dm, uq)
        comps = tuple(Tensor3((q, q, q), tstack[s].copy()) for s in range(3))
        return apply_gradient_transpose_3d(self.basis_p, comps, self.counters, self.engine).data

    # -- operator application ------------------------------------------------

    def apply(self, state: State) -> State:
        """Residual of the coupling operator acting on [u, p]."""
        expected_u = (3, self.mesh.num_elements, self.num_dofs_u_local)
        if state.u.shape != expected_u or state.p.shape != (self.restriction.num_global,):
            raise ValueError(
                f"state dimensions {state.u.shape}/{state.p.shape} do not match "
                f"operator {expected_u}/{(self.restriction.num_global,)}"
            )
        self.counters.operator_applies += 1
        out = self.zero_state()
        p_gathered = self.restriction.gather(state.p)
        fused = self.strategy in ("FusedPA", "FusedMF")
        if fused:
            for e in range(self.mesh.num_elements):
                dm = self._dfactors(e)
                out.u[:, e, :] = self._pressure_to_velocity(p_gathered[e], e, dm)
                v_elem = self._velocity_to_pressure(state.u[:, e, :], e, dm)
                np.add.at(out.p, self.restriction.gather_ids[e], -v_elem)
        else:
            for e in range(self.mesh.num_elements):
                dm = self._dfactors(e)
                out.u[:, e, :] = self._pressure_to_velocity(p_gathered[e], e, dm)
            for e in range(self.mesh.num_elements):
                dm = self._dfactors(e)
                v_elem = self._velocity_to_pressure(state.u[:, e, :], e, dm)
                np.add.at(out.p, self.restriction.gather_ids[e], -v_elem)
        if self.absorbing:
            self._apply_absorbing(state.p, out.p)
        if self.coupling_scale != 1.0:
            out.u *= self.coupling_scale
            out.p *= self.coupling_scale
        return out

    def apply_fused_normal(self, x_u: np.ndarray) -> np.ndarray:
        """Composed normal kernel: velocity space -> velocity space.

        First pass lifts the input through the transposed coupling into the
        assembled pressure space; second pass brings it back.  The fused
        strategies read the quadrature factors once per element, caching
        them across the two passes the way a cooperative kernel keeps them
        resident in shared memory.
        """
        fused = self.strategy in ("FusedPA", "FusedMF")
        z = np.zeros(self.restriction.num_global)
        cache: list[np.ndarray] = []
        for e in range(self.mesh.num_elements):
            dm = self._dfactors(e)
            if fused:
                cache.append(dm)
            v_elem = self._velocity_to_pressure(x_u[:, e, :], e, dm)
            np.add.at(z, self.restriction.gather_ids[e], v_elem)
        out = np.zeros_like(x_u)
        z_gathered = self.restriction.gather(z)
        for e in range(self.mesh.num_elements):
            dm = cache[e] if fused else self._dfactors(e)
            out[:, e, :] = self._pressure_to_velocity(z_gathered[e], e, dm)
        return out

    # -- mass ----------------------------------------------------------------

    def apply_mass_inverse(self, residual: State) -> State:
        lump_u = self.quad.lump_u
        if np.any(lump_u <= 0) or np.any(self.quad.lump_p <= 0):
            raise MassError("lumped mass diagonal has a non-positive entry")
        u = residual.u / lump_u[None, :, :]
        p = residual.p / self.quad.lump_p
        return State(u, p)

    # -- boundary terms -------------------------------------------------------

    def _init_boundary_terms(self):
        dp = self.basis_p.num_dofs_1d
        h = self.mesh.element_size
        self._absorbing_blocks: list[_FaceBlock] = []
        self._surface_blocks: list[_FaceBlock] = []
        self._bottom_blocks: list[_FaceBlock] = []
        for face in self.mesh.boundary_faces:
            in_plane = [ax for ax in range(3) if ax != face.axis]
            scale = (h[in_plane[0]] / 2.0) * (h[in_plane[1]] / 2.0)
            fb = _FaceBlock(
                element=face.element,
                local_ids=_face_local_indices(face.axis, face.side, dp),
                area_scale=scale,
            )
            if face.tag == ABSORBING:
                self._absorbing_blocks.append(fb)
            elif face.tag == SURFACE:
                self._surface_blocks.append(fb)
            elif face.tag == BOTTOM:
                self._bottom_blocks.append(fb)
        bv = self.basis_p.values
        w1 = self.basis_p.quad_weights
        # 2D consistent face mass on the reference square and its row-sum lump
        m1 = bv.T @ (w1[:, None] * bv)
        self._face_mass2d = np.kron(m1, m1)
        lump1 = bv.T @ w1
        self._face_lump2d_ref = np.kron(lump1, lump1)
        self._surface_lump2d = [
            fb.area_scale * self._face_lump2d_ref for fb in self._surface_blocks
        ]

    def _apply_absorbing(self, p: np.ndarray, out_p: np.ndarray) -> None:
        """Adds the impedance pairing over the lateral faces."""
        for fb in self._absorbing_blocks:
            e = fb.element
            z = self.quad.rho[e] * np.sqrt(1.0 / (self.quad.rho[e] * self.quad.kinv[e]))
            gids = self.restriction.gather_ids[e][fb.local_ids]
            pf = p[gids]
            np.add.at(out_p, gids, (fb.area_scale / z) * (self._face_mass2d @ pf))

    def bottom_face_load(self, profile) -> np.ndarray:
        """Assembled load vector for a normal-velocity profile on the bottom.

        profile(x, y) is evaluated at the bottom-face node positions; the
        returned vector pairs it against the pressure test functions.
        """
        if not hasattr(self, "_bottom_blocks"):
            self._init_boundary_terms()
        load = np.zeros(self.restriction.num_global)
        nodes = self.basis_p.nodes
        for fb in self._bottom_blocks:
            origin = self.mesh.element_origin(fb.element)
            h = self.mesh.element_size
            xs = origin[0] + (nodes + 1.0) * 0.5 * h[0]
            ys = origin[1] + (nodes + 1.0) * 0.5 * h[1]
            gx, gy = np.meshgrid(xs, ys, indexing="ij")
            vals = np.asarray(profile(gx.ravel(order="F"), gy.ravel(order="F")))
            gids = self.restriction.gather_ids[fb.element][fb.local_ids]
            np.add.at(load, gids, fb.area_scale * (self._face_mass2d @ vals))
        return load

    def surface_height(self, state: State) -> np.ndarray:
        """Diagnostic free-surface elevation p/(rho*g) at surface nodes."""
        if self.surface_gravity is None:
            raise ValueError("operator was built without surface gravity")
        vals = []
        for fb in self._surface_blocks:
            gids = self.restriction.gather_ids[fb.element][fb.local_ids]
            vals.append(state.p[gids] / (self.quad.rho[fb.element] * self.surface_gravity))
        return np.concatenate(vals) if vals else np.zeros(0)


# ---------------------------------------------------------------------------
# Energy, probing
# ---------------------------------------------------------------------------


def acoustic_energy(state: State, quad: QuadData) -> float:
    """Half the mass-weighted squares, the discretely conserved quantity.

    Uses the lumped (nodal-quadrature) mass diagonals, which the rigid-wall
    semi-discrete system conserves exactly.
    """
    e_u = float(np.sum(quad.lump_u[None, :, :] * state.u**2))
    e_p = float(np.sum(quad.lump_p * state.p**2))
    return 0.5 * (e_u + e_p)


def dense_probe(apply_fn, template: State) -> np.ndarray:
    """Explicit matrix of a state-to-state map via unit-vector probing."""
    n = template.num_dofs
    cols = []
    for j in range(n):
        vec = np.zeros(n)
        vec[j] = 1.0
        out = apply_fn(template.unpack_like(vec))
        cols.append(out.pack())
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# Time stepping
# ---------------------------------------------------------------------------


def rk4_step(state: State, dt: float, op: BlockOperator, forcing=None, t: float = 0.0,
             step_index: int = 0) -> State:
    """Classical four-stage Runge-Kutta step of [u, p]' = Minv(-A[u, p] + f)."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")

    def rhs(time: float, y: State) -> State:
        r = op.apply(y)
        r.u = -r.u
        r.p = -r.p
        if forcing is not None:
            f = forcing(time)
            r.u = r.u + f.u
            r.p = r.p + f.p
        return op.apply_mass_inverse(r)

    k1 = rhs(t, state)
    k2 = rhs(t + dt / 2, state_lincomb((1.0, dt / 2), (state, k1)))
    k3 = rhs(t + dt / 2, state_lincomb((1.0, dt / 2), (state, k2)))
    k4 = rhs(t + dt, state_lincomb((1.0, dt), (state, k3)))
    new = state_lincomb(
        (1.0, dt / 6, dt / 3, dt / 3, dt / 6), (state, k1, k2, k3, k4)
    )
    if not new.is_finite():
        raise DivergenceError(f"non-finite state after step {step_index}")
    return new
