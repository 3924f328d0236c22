"""Structured axis-aligned hexahedral meshes and element-dof restrictions.

Elements map from the reference cube [-1, 1]^3, so an element of physical
size (hx, hy, hz) has the constant diagonal Jacobian diag(h/2) and
determinant hx*hy*hz/8.  Boundary faces are tagged: the top of the box is
the free surface, the bottom is the forcing boundary, the four sides are
absorbing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Raised for degenerate mesh geometry."""


SURFACE = "surface"
BOTTOM = "bottom"
ABSORBING = "absorbing"


@dataclass(frozen=True)
class BoundaryFace:
    element: int
    axis: int  # face normal axis, 0..2
    side: int  # 0 = low end, 1 = high end
    tag: str


@dataclass
class Mesh:
    nx: int
    ny: int
    nz: int
    extents: tuple[float, float, float]
    vertices: np.ndarray
    connectivity: np.ndarray
    boundary_faces: list[BoundaryFace] = field(default_factory=list)

    @property
    def num_elements(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def element_size(self) -> tuple[float, float, float]:
        return (
            self.extents[0] / self.nx,
            self.extents[1] / self.ny,
            self.extents[2] / self.nz,
        )

    @property
    def jacobian_diag(self) -> np.ndarray:
        """Constant per-element Jacobian diagonal (h/2 per axis)."""
        h = self.element_size
        return np.array([h[0] / 2.0, h[1] / 2.0, h[2] / 2.0])

    @property
    def jacobian_det(self) -> float:
        return float(np.prod(self.jacobian_diag))

    def element_coords(self, e: int) -> tuple[int, int, int]:
        ex = e % self.nx
        ey = (e // self.nx) % self.ny
        ez = e // (self.nx * self.ny)
        return ex, ey, ez

    def element_origin(self, e: int) -> np.ndarray:
        ex, ey, ez = self.element_coords(e)
        h = self.element_size
        return np.array([ex * h[0], ey * h[1], ez * h[2]])


def build_mesh(nx: int, ny: int, nz: int, extents=(1.0, 1.0, 1.0)) -> Mesh:
    """Axis-aligned box mesh with tagged boundary faces."""
    if min(nx, ny, nz) < 1:
        raise GeometryError(f"element counts must be >= 1, got {(nx, ny, nz)}")
    if min(extents) <= 0:
        raise GeometryError(f"domain extents must be positive, got {extents}")
    hx, hy, hz = extents[0] / nx, extents[1] / ny, extents[2] / nz

    xs = np.arange(nx + 1) * hx
    ys = np.arange(ny + 1) * hy
    zs = np.arange(nz + 1) * hz
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    vertices = np.column_stack([gx.ravel(order="F"), gy.ravel(order="F"), gz.ravel(order="F")])

    def vid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    conn = np.zeros((nx * ny * nz, 8), dtype=np.int64)
    faces = []
    for ez in range(nz):
        for ey in range(ny):
            for ex in range(nx):
                e = ex + nx * (ey + ny * ez)
                corners = [
                    vid(ex + di, ey + dj, ez + dk)
                    for dk in (0, 1)
                    for dj in (0, 1)
                    for di in (0, 1)
                ]
                conn[e] = corners
                if ex == 0:
                    faces.append(BoundaryFace(e, 0, 0, ABSORBING))
                if ex == nx - 1:
                    faces.append(BoundaryFace(e, 0, 1, ABSORBING))
                if ey == 0:
                    faces.append(BoundaryFace(e, 1, 0, ABSORBING))
                if ey == ny - 1:
                    faces.append(BoundaryFace(e, 1, 1, ABSORBING))
                if ez == 0:
                    faces.append(BoundaryFace(e, 2, 0, BOTTOM))
                if ez == nz - 1:
                    faces.append(BoundaryFace(e, 2, 1, SURFACE))
    return Mesh(nx, ny, nz, tuple(float(x) for x in extents), vertices, conn, faces)


@dataclass
class Restriction:
    """Element-local to global dof map for a conforming nodal space."""

    num_global: int
    gather_ids: np.ndarray  # (num_elements, local_dofs)

    def gather(self, global_vec: np.ndarray) -> np.ndarray:
        return global_vec[self.gather_ids]

    def scatter_add(self, element_vals: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        if out is None:
            out = np.zeros(self.num_global)
        np.add.at(out, self.gather_ids.ravel(), element_vals.ravel())
        return out

    def multiplicity(self) -> np.ndarray:
        """Diagonal of G^T G: how many elements reference each dof."""
        return self.scatter_add(np.ones(self.gather_ids.shape))


def h1_restriction(mesh: Mesh, num_dofs_1d: int) -> Restriction:
    """Shared-node numbering for a continuous tensor-product space.

    Element-local nodes are ordered x-fastest to match the canonical tensor
    storage order.
    """
    d = num_dofs_1d
    npx = mesh.nx * (d - 1) + 1
    npy = mesh.ny * (d - 1) + 1
    npz = mesh.nz * (d - 1) + 1
    gather = np.zeros((mesh.num_elements, d**3), dtype=np.int64)
    for e in range(mesh.num_elements):
        ex, ey, ez = mesh.element_coords(e)
        loc = 0
        for k in range(d):
            for j in range(d):
                for i in range(d):
                    gi = ex * (d - 1) + i
                    gj = ey * (d - 1) + j
                    gk = ez * (d - 1) + k
                    gather[e, loc] = gi + npx * (gj + npy * gk)
                    loc += 1
    return Restriction(num_global=npx * npy * npz, gather_ids=gather)


def h1_node_coords(mesh: Mesh, nodes_1d: np.ndarray) -> np.ndarray:
    """Physical coordinates of the global shared nodes, x-fastest.

    nodes_1d are reference coordinates on [-1, 1]; interior element nodes
    are mapped affinely into each element.
    """
    d = nodes_1d.size
    h = mesh.element_size
    axes = []
    for n_el, hh in zip((mesh.nx, mesh.ny, mesh.nz), h):
        pts = np.empty(n_el * (d - 1) + 1)
        for e in range(n_el):
            lo = e * hh
            mapped = lo + (nodes_1d + 1.0) * 0.5 * hh
            pts[e * (d - 1) : e * (d - 1) + d] = mapped
        axes.append(pts)
    gx, gy, gz = np.meshgrid(axes[0], axes[1], axes[2], indexing="ij")
    return np.column_stack(
        [gx.ravel(order="F"), gy.ravel(order="F"), gz.ravel(order="F")]
    )
