"""Tests for the cyclic sum-factorization kernels.

Every nontrivial expectation is checked against an independent oracle built
here: a naive triple-loop contraction, an explicit Kronecker-product matrix,
or a direct inner-product identity.
"""

import numpy as np
import pytest

from feklab.counters import Counters
from feklab.tensor import (
    Basis1D,
    ShapeError,
    Tensor3,
    apply_basis_3d,
    apply_basis_transpose_3d,
    apply_gradient_3d,
    apply_gradient_transpose_3d,
    contract_cyclic,
    gauss_points,
    gll_points,
)


# ---------------------------------------------------------------------------
# Oracles (independent of the implementation under test)
# ---------------------------------------------------------------------------


def naive_contract(matrix, arr):
    """Triple-loop reference for one cyclic contraction stage."""
    q, d = matrix.shape
    _, e1, e2 = arr.shape
    out = np.zeros((e1, e2, q))
    for j in range(e1):
        for k in range(e2):
            for a in range(q):
                acc = 0.0
                for i in range(d):
                    acc += matrix[a, i] * arr[i, j, k]
                out[j, k, a] = acc
    return out


def kron3(m3, m2, m1):
    """Kronecker matrix acting on vec_F(X): slowest factor first."""
    return np.kron(m3, np.kron(m2, m1))


def vec_f(arr):
    return arr.ravel(order="F")


def unvec_f(v, shape):
    return v.reshape(shape, order="F")


def rel_err(a, b):
    denom = max(np.max(np.abs(b)), 1e-300)
    return np.max(np.abs(a - b)) / denom


# ---------------------------------------------------------------------------
# 1D basis construction
# ---------------------------------------------------------------------------


def test_gll_points_include_endpoints_and_are_symmetric():
    for n in range(2, 8):
        pts = gll_points(n)
        assert pts[0] == -1.0 and pts[-1] == 1.0
        assert np.allclose(pts, -pts[::-1], atol=1e-14)


def test_gauss_quadrature_integrates_polynomials_exactly():
    x, w = gauss_points(5)
    # degree 9 is the highest exactly integrable by 5 points
    for deg in range(10):
        exact = (1.0 - (-1.0) ** (deg + 1)) / (deg + 1)
        assert abs(np.sum(w * x**deg) - exact) < 1e-13


def test_nodal_basis_partition_of_unity():
    for d, q in [(2, 2), (4, 5), (5, 5), (6, 4)]:
        basis = Basis1D.nodal(d, q)
        assert basis.partition_of_unity_error() < 1e-12


def test_nodal_basis_interpolates_its_nodes():
    from feklab.tensor import lagrange_values

    basis = Basis1D.nodal(5, 5)
    vals = lagrange_values(basis.nodes, basis.nodes)
    assert np.allclose(vals, np.eye(5), atol=1e-12)


def test_basis_shape_validation():
    with pytest.raises(ShapeError):
        Basis1D(num_dofs_1d=3, num_quad_1d=2, values=np.zeros((3, 3)), gradients=np.zeros((2, 3)))


# ---------------------------------------------------------------------------
# contract_cyclic
# ---------------------------------------------------------------------------


def test_contract_identity_rotates_indices():
    rng = np.random.default_rng(0)
    arr = rng.standard_normal((4, 3, 2))
    x = Tensor3.from_array(arr)
    out = contract_cyclic(np.eye(4), x)
    assert out.extents == (3, 2, 4)
    assert out.order == (1, 2, 0)
    # out(j, k, a) == arr[a, j, k]
    assert np.array_equal(out.as_array(), np.moveaxis(arr, 0, 2))


def test_contract_scalar_case():
    x = Tensor3(extents=(1, 1, 1), data=np.array([3.0]))
    out = contract_cyclic(np.array([[2.0]]), x)
    assert out.data[0] == 6.0


def test_contract_matches_matricized_multiply():
    rng = np.random.default_rng(1)
    b = rng.standard_normal((5, 4))
    arr = rng.standard_normal((4, 4, 4))
    out = contract_cyclic(b, Tensor3.from_array(arr))
    # oracle: dense (16 x 4) times (4 x 5) matricized product
    x2 = arr.reshape(4, 16, order="F")
    oracle = (x2.T @ b.T).reshape((4, 4, 5), order="F")
    assert rel_err(out.as_array(), oracle) <= 1e-13
    # and the handwritten triple loop agrees too
    assert rel_err(out.as_array(), naive_contract(b, arr)) <= 1e-13


def test_contract_shape_error_names_both_extents():
    x = Tensor3.from_array(np.zeros((3, 2, 2)))
    with pytest.raises(ShapeError, match=r"3.*does not match.*4"):
        contract_cyclic(np.zeros((5, 4)), x)


def test_three_stages_return_to_canonical_order():
    rng = np.random.default_rng(2)
    b = rng.standard_normal((5, 4))
    x = Tensor3.from_array(rng.standard_normal((4, 4, 4)))
    out = contract_cyclic(b, contract_cyclic(b, contract_cyclic(b, x)))
    assert out.order == (0, 1, 2)
    assert out.extents == (5, 5, 5)


# ---------------------------------------------------------------------------
# apply_basis_3d and its adjoint
# ---------------------------------------------------------------------------


def test_apply_basis_identity():
    rng = np.random.default_rng(3)
    arr = rng.standard_normal((4, 4, 4))
    basis = Basis1D(4, 4, values=np.eye(4), gradients=np.zeros((4, 4)))
    out = apply_basis_3d(basis, Tensor3.from_array(arr))
    assert np.array_equal(out.as_array(), arr)


def test_apply_basis_partition_of_unity_maps_ones_to_ones():
    basis = Basis1D.nodal(4, 5)
    out = apply_basis_3d(basis, Tensor3.from_array(np.ones((4, 4, 4))))
    assert np.max(np.abs(out.as_array() - 1.0)) < 1e-12


def test_apply_basis_matches_kronecker_oracle():
    rng = np.random.default_rng(4)
    b = rng.standard_normal((5, 4))
    basis = Basis1D(4, 5, values=b, gradients=np.zeros((5, 4)))
    arr = rng.standard_normal((4, 4, 4))
    out = apply_basis_3d(basis, Tensor3.from_array(arr))
    oracle = unvec_f(kron3(b, b, b) @ vec_f(arr), (5, 5, 5))
    assert rel_err(out.as_array(), oracle) <= 1e-12


def test_transpose_identity():
    rng = np.random.default_rng(5)
    arr = rng.standard_normal((4, 4, 4))
    basis = Basis1D(4, 4, values=np.eye(4), gradients=np.zeros((4, 4)))
    out = apply_basis_transpose_3d(basis, Tensor3.from_array(arr))
    assert np.array_equal(out.as_array(), arr)


def test_transpose_is_exact_adjoint():
    rng = np.random.default_rng(6)
    b = rng.standard_normal((5, 4))
    basis = Basis1D(4, 5, values=b, gradients=np.zeros((5, 4)))
    x = rng.standard_normal((4, 4, 4))
    y = rng.standard_normal((5, 5, 5))
    bx = apply_basis_3d(basis, Tensor3.from_array(x)).as_array()
    bty = apply_basis_transpose_3d(basis, Tensor3.from_array(y)).as_array()
    lhs = np.sum(bx * y)
    rhs = np.sum(x * bty)
    assert abs(lhs - rhs) <= 1e-12 * (abs(lhs) + 1.0)


def test_transpose_single_column_rank1_reduction():
    rng = np.random.default_rng(7)
    col = rng.standard_normal((5, 1))
    basis = Basis1D(1, 5, values=col, gradients=np.zeros((5, 1)))
    y = rng.standard_normal((5, 5, 5))
    out = apply_basis_transpose_3d(basis, Tensor3.from_array(y))
    oracle = np.einsum("a,b,c,abc->", col[:, 0], col[:, 0], col[:, 0], y)
    assert abs(out.data[0] - oracle) <= 1e-12 * (abs(oracle) + 1.0)


def test_adjointness_many_trials():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        d = int(rng.integers(2, 7))
        q = int(rng.integers(2, 7))
        b = rng.standard_normal((q, d))
        basis = Basis1D(d, q, values=b, gradients=np.zeros((q, d)))
        x = rng.standard_normal((d, d, d))
        y = rng.standard_normal((q, q, q))
        bx = apply_basis_3d(basis, Tensor3.from_array(x)).as_array()
        bty = apply_basis_transpose_3d(basis, Tensor3.from_array(y)).as_array()
        lhs = np.sum(bx * y)
        rhs = np.sum(x * bty)
        assert abs(lhs - rhs) <= 1e-12 * (abs(lhs) + 1.0)


def test_apply_basis_linearity():
    rng = np.random.default_rng(9)
    basis = Basis1D.nodal(4, 5)
    x = rng.standard_normal((4, 4, 4))
    z = rng.standard_normal((4, 4, 4))
    alpha, beta = 0.7, -2.3
    combined = apply_basis_3d(basis, Tensor3.from_array(alpha * x + beta * z)).as_array()
    separate = alpha * apply_basis_3d(basis, Tensor3.from_array(x)).as_array() + (
        beta * apply_basis_3d(basis, Tensor3.from_array(z)).as_array()
    )
    assert rel_err(combined, separate) <= 1e-13


def test_flop_counter_exact():
    for d, q in [(4, 5), (5, 5), (3, 6)]:
        basis = Basis1D.nodal(d, q)
        counter = Counters()
        apply_basis_3d(basis, Tensor3.from_array(np.ones((d, d, d))), counter)
        assert counter.flops == 2 * (q * d**3 + q**2 * d**2 + q**3 * d)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def test_gradient_of_constant_field_is_zero():
    basis = Basis1D.nodal(4, 5)
    comps = apply_gradient_3d(basis, Tensor3.from_array(np.full((4, 4, 4), 2.5)))
    for c in comps:
        assert np.max(np.abs(c.as_array())) < 1e-12


def test_gradient_of_linear_field_on_unit_interval():
    # basis on [0, 1]: the interpolant of f(x) = x has derivative exactly 1
    basis = Basis1D.nodal(4, 5, interval=(0.0, 1.0))
    nodes = basis.nodes
    x = np.zeros((4, 4, 4))
    for i in range(4):
        x[i, :, :] = nodes[i]
    comps = apply_gradient_3d(basis, Tensor3.from_array(x))
    assert np.max(np.abs(comps[0].as_array() - 1.0)) < 1e-12
    assert np.max(np.abs(comps[1].as_array())) < 1e-12
    assert np.max(np.abs(comps[2].as_array())) < 1e-12


def test_gradient_matches_kronecker_oracle():
    rng = np.random.default_rng(10)
    basis = Basis1D.nodal(4, 5)
    b, g = basis.values, basis.gradients
    arr = rng.standard_normal((4, 4, 4))
    comps = apply_gradient_3d(basis, Tensor3.from_array(arr))
    oracles = [
        unvec_f(kron3(b, b, g) @ vec_f(arr), (5, 5, 5)),
        unvec_f(kron3(b, g, b) @ vec_f(arr), (5, 5, 5)),
        unvec_f(kron3(g, b, b) @ vec_f(arr), (5, 5, 5)),
    ]
    for c, oracle in zip(comps, oracles):
        assert rel_err(c.as_array(), oracle) <= 1e-12


def test_gradient_transpose_is_adjoint_of_gradient():
    rng = np.random.default_rng(11)
    basis = Basis1D.nodal(4, 5)
    x = rng.standard_normal((4, 4, 4))
    ys = [rng.standard_normal((5, 5, 5)) for _ in range(3)]
    comps = apply_gradient_3d(basis, Tensor3.from_array(x))
    lhs = sum(np.sum(c.as_array() * y) for c, y in zip(comps, ys))
    gt = apply_gradient_transpose_3d(basis, tuple(Tensor3.from_array(y) for y in ys))
    rhs = np.sum(x * gt.as_array())
    assert abs(lhs - rhs) <= 1e-12 * (abs(lhs) + 1.0)


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------


def test_cyclic_composition_equals_naive_reference():
    rng = np.random.default_rng(12)
    for d, q in [(2, 3), (4, 5), (5, 5), (6, 2)]:
        b = rng.standard_normal((q, d))
        arr = rng.standard_normal((d, d, d))
        # in-place reference with no index reordering
        oracle = np.einsum("ai,bj,ck,ijk->abc", b, b, b, arr)
        basis = Basis1D(d, q, values=b, gradients=np.zeros((q, d)))
        out = apply_basis_3d(basis, Tensor3.from_array(arr))
        assert out.extents == (q, q, q)
        assert rel_err(out.as_array(), oracle) <= 1e-13


def test_determinism_bitwise():
    rng = np.random.default_rng(13)
    basis = Basis1D.nodal(5, 5)
    arr = rng.standard_normal((5, 5, 5))
    a = apply_basis_3d(basis, Tensor3.from_array(arr)).data
    b = apply_basis_3d(basis, Tensor3.from_array(arr)).data
    assert np.array_equal(a, b)


def test_tensor3_validation():
    with pytest.raises(ShapeError):
        Tensor3(extents=(2, 2, 2), data=np.zeros(7))
    with pytest.raises(ShapeError):
        Tensor3(extents=(2, 2, 2), data=np.zeros(8), order=(0, 0, 2))
