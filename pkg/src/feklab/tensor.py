"""Sum-factorized application of 1D tensor-product bases to 3D element data.

All contractions follow the cyclic index convention: the contracted index is
always the fastest-changing one in storage, and the freshly produced index is
appended as the slowest.  Three chained stages therefore return a tensor to
canonical index order.  Storage is flat FP64 with the first extent fastest
(Fortran-order semantics); tensors carry an explicit tag recording where each
logical index currently sits instead of ever transposing data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .counters import Counters


class ShapeError(ValueError):
    """Raised when tensor extents and operator dimensions disagree."""


# ---------------------------------------------------------------------------
# 1D bases
# ---------------------------------------------------------------------------


def gll_points(n: int, interval: tuple[float, float] = (-1.0, 1.0)) -> np.ndarray:
    """Gauss-Lobatto-Legendre points: endpoints plus roots of P'_{n-1}."""
    if n < 2:
        raise ValueError(f"GLL rule needs at least 2 points, got {n}")
    if n == 2:
        pts = np.array([-1.0, 1.0])
    else:
        inner = np.polynomial.Polynomial(
            np.polynomial.legendre.leg2poly([0.0] * (n - 1) + [1.0])
        ).deriv().roots()
        pts = np.concatenate(([-1.0], np.sort(np.real(inner)), [1.0]))
    a, b = interval
    return 0.5 * (a + b) + 0.5 * (b - a) * pts


def gauss_points(n: int, interval: tuple[float, float] = (-1.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on the given interval."""
    x, w = np.polynomial.legendre.leggauss(n)
    a, b = interval
    return 0.5 * (a + b) + 0.5 * (b - a) * x, 0.5 * (b - a) * w


def _lagrange_coeffs(nodes: np.ndarray) -> list[np.ndarray]:
    """Monomial coefficients of the Lagrange cardinal polynomials."""
    coeffs = []
    for i, xi in enumerate(nodes):
        others = np.delete(nodes, i)
        c = np.polynomial.polynomial.polyfromroots(others)
        c = c / np.polynomial.polynomial.polyval(xi, c)
        coeffs.append(c)
    return coeffs


def lagrange_values(nodes: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Table L_i(x_a) of shape (len(points), len(nodes))."""
    cols = [np.polynomial.polynomial.polyval(points, c) for c in _lagrange_coeffs(nodes)]
    return np.column_stack(cols)


def lagrange_derivatives(nodes: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Table L_i'(x_a) of shape (len(points), len(nodes))."""
    cols = [
        np.polynomial.polynomial.polyval(points, np.polynomial.polynomial.polyder(c))
        for c in _lagrange_coeffs(nodes)
    ]
    return np.column_stack(cols)


@dataclass(frozen=True)
class Basis1D:
    """Tabulated 1D basis: values and derivatives at quadrature points.

    values[a, i] = L_i evaluated at quadrature point a (q rows, d columns);
    gradients holds the derivatives at the same points.  For a nodal basis
    the rows of values sum to one.
    """

    num_dofs_1d: int
    num_quad_1d: int
    values: np.ndarray
    gradients: np.ndarray
    nodes: np.ndarray | None = None
    quad_points: np.ndarray | None = None
    quad_weights: np.ndarray | None = None

    def __post_init__(self):
        q, d = self.num_quad_1d, self.num_dofs_1d
        if self.values.shape != (q, d):
            raise ShapeError(f"values must be {q}x{d}, got {self.values.shape}")
        if self.gradients.shape != (q, d):
            raise ShapeError(f"gradients must be {q}x{d}, got {self.gradients.shape}")

    @classmethod
    def nodal(
        cls,
        num_dofs_1d: int,
        num_quad_1d: int,
        interval: tuple[float, float] = (-1.0, 1.0),
    ) -> "Basis1D":
        """Nodal basis on GLL points with Gauss-Legendre quadrature."""
        nodes = gll_points(num_dofs_1d, interval)
        qpts, qwts = gauss_points(num_quad_1d, interval)
        return cls(
            num_dofs_1d=num_dofs_1d,
            num_quad_1d=num_quad_1d,
            values=lagrange_values(nodes, qpts),
            gradients=lagrange_derivatives(nodes, qpts),
            nodes=nodes,
            quad_points=qpts,
            quad_weights=qwts,
        )

    def partition_of_unity_error(self) -> float:
        return float(np.max(np.abs(self.values.sum(axis=1) - 1.0)))


# ---------------------------------------------------------------------------
# Order-tagged 3D tensors
# ---------------------------------------------------------------------------

CANONICAL_ORDER = (0, 1, 2)


@dataclass
class Tensor3:
    """Flat FP64 storage for a 3-index tensor with an index-order tag.

    extents are in storage order (fastest, middle, slowest); order[pos] names
    the logical index living at storage position pos.  data[i0 + e0*i1 +
    e0*e1*i2] holds entry (i0, i1, i2) in storage coordinates.
    """

    extents: tuple[int, int, int]
    data: np.ndarray
    order: tuple[int, int, int] = CANONICAL_ORDER

    def __post_init__(self):
        n = self.extents[0] * self.extents[1] * self.extents[2]
        if self.data.size != n:
            raise ShapeError(
                f"data length {self.data.size} does not match extents {self.extents}"
            )
        if sorted(self.order) != [0, 1, 2]:
            raise ShapeError(f"order {self.order} is not a permutation of (0, 1, 2)")
        if self.data.dtype != np.float64:
            self.data = np.asarray(self.data, dtype=np.float64)

    @classmethod
    def from_array(cls, arr: np.ndarray, order: tuple[int, int, int] = CANONICAL_ORDER) -> "Tensor3":
        """Wrap a 3D array; axis 0 of arr becomes the fastest storage index."""
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim != 3:
            raise ShapeError(f"expected a 3D array, got ndim={a.ndim}")
        return cls(extents=a.shape, data=a.ravel(order="F").copy(), order=order)

    def as_array(self) -> np.ndarray:
        """View as a 3D array indexed in storage order (fastest first)."""
        return self.data.reshape(self.extents, order="F")

    def copy(self) -> "Tensor3":
        return Tensor3(self.extents, self.data.copy(), self.order)


# ---------------------------------------------------------------------------
# Cyclic contractions
# ---------------------------------------------------------------------------


def contract_cyclic(
    matrix: np.ndarray,
    x: Tensor3,
    counter: Counters | None = None,
) -> Tensor3:
    """Contract the fastest index of x with a (q x d) matrix.

    Computes out(j, k, a) = sum_i matrix[a, i] * x(i, j, k) where i is the
    current fastest index of x; the new index a is appended slowest, so the
    order tag rotates cyclically.  Accumulation runs over i in ascending
    order with a single accumulator per output entry, which keeps results
    bit-reproducible across runs.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"matrix must be 2D, got ndim={m.ndim}")
    q, d = m.shape
    e0, e1, e2 = x.extents
    if e0 != d:
        raise ShapeError(
            f"contracted extent {e0} of tensor {x.extents} does not match "
            f"matrix columns {d} of matrix {m.shape}"
        )
    x2 = x.data.reshape(d, e1 * e2, order="F")
    out2 = np.zeros((e1 * e2, q))
    for i in range(d):
        out2 += np.multiply.outer(x2[i], m[:, i])
    if counter is not None:
        counter.flops += 2 * d * q * e1 * e2
    return Tensor3(
        extents=(e1, e2, q),
        data=out2.ravel(order="F"),
        order=(x.order[1], x.order[2], x.order[0]),
    )


def _chain(matrices, x: Tensor3, counter: Counters | None) -> Tensor3:
    out = x
    for m in matrices:
        out = contract_cyclic(m, out, counter)
    return out


def apply_basis_3d(basis: Basis1D, x: Tensor3, counter: Counters | None = None,
                   engine=None) -> Tensor3:
    """Evaluate nodal data at quadrature points: Y = (B (x) B (x) B) X.

    x must be cubical with extent equal to the basis dof count; the result is
    cubical with the quadrature extent and is returned in canonical order.
    """
    _require_cubical(x, basis.num_dofs_1d)
    b = basis.values
    if engine is not None:
        return engine.chain((b, b, b), x, counter)
    return _chain((b, b, b), x, counter)


def apply_basis_transpose_3d(basis: Basis1D, y: Tensor3, counter: Counters | None = None,
                             engine=None) -> Tensor3:
    """Exact adjoint of apply_basis_3d (quadrature values back to dofs)."""
    _require_cubical(y, basis.num_quad_1d)
    bt = basis.values.T
    if engine is not None:
        return engine.chain((bt, bt, bt), y, counter)
    return _chain((bt, bt, bt), y, counter)


def apply_gradient_3d(basis: Basis1D, x: Tensor3, counter: Counters | None = None,
                      engine=None) -> tuple[Tensor3, Tensor3, Tensor3]:
    """Reference-space gradient at quadrature points, one tensor per axis.

    Component r uses the derivative table in contraction stage r and the
    value table in the other two stages.
    """
    _require_cubical(x, basis.num_dofs_1d)
    b, g = basis.values, basis.gradients
    out = []
    for r in range(3):
        mats = [g if s == r else b for s in range(3)]
        if engine is not None:
            out.append(engine.chain(mats, x, counter))
        else:
            out.append(_chain(mats, x, counter))
    return tuple(out)


def apply_gradient_transpose_3d(
    basis: Basis1D,
    components: tuple[Tensor3, Tensor3, Tensor3],
    counter: Counters | None = None,
    engine=None,
) -> Tensor3:
    """Adjoint of apply_gradient_3d: sums the three transposed legs."""
    bt, gt = basis.values.T, basis.gradients.T
    total = None
    for r, comp in enumerate(components):
        _require_cubical(comp, basis.num_quad_1d)
        mats = [gt if s == r else bt for s in range(3)]
        if engine is not None:
            leg = engine.chain(mats, comp, counter)
        else:
            leg = _chain(mats, comp, counter)
        if total is None:
            total = leg
        else:
            total.data += leg.data
    return total


def _require_cubical(x: Tensor3, extent: int) -> None:
    if x.extents != (extent, extent, extent):
        raise ShapeError(
            f"expected cubical extents ({extent}, {extent}, {extent}), got {x.extents}"
        )
