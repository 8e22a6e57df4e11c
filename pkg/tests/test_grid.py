import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from picn.grid import (
    LAPLACE,
    GridSpec,
    StencilKernel,
    apply_stencil,
    apply_stencil_transpose,
    derivative_kernel,
    kernel_bank,
)


def brute_correlate(field, kernel):
    p, q = kernel.shape
    rows, cols = field.shape[0] - p + 1, field.shape[1] - q + 1
    out = np.zeros((rows, cols))
    for i in range(rows):
        for j in range(cols):
            for a in range(p):
                for b in range(q):
                    out[i, j] += kernel[a, b] * field[i + a, j + b]
    return out


def test_grid_node_layout():
    g = GridSpec(0.0, 5.0, 0.0, 3.0, 6, 4)
    assert g.dx == 1.0 and g.dy == 1.0
    assert g.shape == (4, 6)
    assert g.node(2, 3) == (3.0, 2.0)
    X, Y = g.mesh()
    assert X[2, 3] == 3.0 and Y[2, 3] == 2.0


def test_from_spacing_covers_box():
    g = GridSpec.from_spacing(-2.0, 2.0, -1.0, 1.0, 0.02)
    assert (g.nx, g.ny) == (201, 101)
    assert g.dx == pytest.approx(0.02)


def test_laplace_kernel_matches_five_point_stencil():
    h = 0.1
    k = derivative_kernel(LAPLACE, h, h)
    expected = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]]) / h**2
    np.testing.assert_allclose(k.coeffs, expected, rtol=1e-14)


def test_second_x_kernel_on_unit_grid():
    k = derivative_kernel((2, 0), 1.0)
    np.testing.assert_array_equal(k.coeffs, [[1.0, -2.0, 1.0]])
    x = np.arange(8.0)
    out = apply_stencil((x**2)[None, :], k)
    np.testing.assert_allclose(out, 2.0, atol=1e-12)


def test_first_x_kernel_half_spacing():
    k = derivative_kernel((1, 0), 0.5)
    np.testing.assert_array_equal(k.coeffs, [[-1.0, 0.0, 1.0]])
    x = 0.5 * np.arange(9)
    np.testing.assert_allclose(apply_stencil(x[None, :], k), 1.0, atol=1e-12)


@pytest.mark.parametrize("order", [(3, 0), (0, 3), (2, 1), "biharmonic"])
def test_unsupported_order_raises(order):
    with pytest.raises(ValueError):
        derivative_kernel(order, 0.1, 0.1)


def test_y_derivative_needs_2d():
    with pytest.raises(ValueError):
        derivative_kernel((0, 1), 0.1)


def test_constant_field_has_zero_laplacian():
    k = derivative_kernel(LAPLACE, 0.3, 0.3)
    np.testing.assert_allclose(apply_stencil(np.full((7, 9), 2.5), k), 0.0, atol=1e-12)


def test_laplacian_of_radial_quadratic_is_four():
    g = GridSpec(0.0, 9.0, 0.0, 6.0, 10, 7)
    X, Y = g.mesh()
    out = apply_stencil(X**2 + Y**2, derivative_kernel(LAPLACE, g.dx, g.dy))
    assert out.shape == (5, 8)
    np.testing.assert_allclose(out, 4.0, atol=1e-10)


def test_valid_output_alignment():
    f = np.arange(35.0).reshape(5, 7)
    k = np.zeros((3, 3))
    k[1, 1] = 1.0
    np.testing.assert_array_equal(apply_stencil(f, k), f[1:-1, 1:-1])


def test_kernel_larger_than_field_raises():
    with pytest.raises(ValueError):
        apply_stencil(np.ones((2, 5)), np.ones((3, 3)))


def test_even_kernel_rejected():
    with pytest.raises(ValueError):
        StencilKernel(np.ones((2, 3)))


def _monomial_derivative(a, b, ox, oy, X, Y):
    def d(n, k, Z):
        if k > n:
            return np.zeros_like(Z)
        c = 1.0
        for t in range(k):
            c *= n - t
        return c * Z ** (n - k)
    return d(a, ox, X) * d(b, oy, Y)


# (order, exact degree per axis): central differences are exact up to these
BANK = [((1, 0), 2), ((0, 1), 2), ((2, 0), 3), ((0, 2), 3), ((1, 1), 2)]


@pytest.mark.parametrize("order,deg", BANK)
def test_polynomial_exactness(order, deg):
    g = GridSpec(0.5, 1.5, 0.25, 1.25, 11, 11)
    X, Y = g.mesh()
    k = derivative_kernel(order, g.dx, g.dy).embedded((3, 3))
    for a in range(deg + 1):
        for b in range(deg + 1):
            out = apply_stencil(X**a * Y**b, k)
            exact = _monomial_derivative(a, b, *order, X, Y)[1:-1, 1:-1]
            np.testing.assert_allclose(out, exact, atol=1e-10, err_msg=f"x^{a} y^{b}")


def test_laplace_polynomial_exactness():
    g = GridSpec(0.5, 1.5, 0.25, 1.0, 11, 9)
    X, Y = g.mesh()
    k = derivative_kernel(LAPLACE, g.dx, g.dy)
    for a in range(4):
        for b in range(4):
            f = X**a * Y**b
            exact = (_monomial_derivative(a, b, 2, 0, X, Y) + _monomial_derivative(a, b, 0, 2, X, Y))
            np.testing.assert_allclose(apply_stencil(f, k), exact[1:-1, 1:-1], atol=1e-10)


def test_mixed_kernel_orientation():
    # row index runs along +y, so u = x*y must give u_xy = +1
    g = GridSpec(0.0, 1.0, 0.0, 2.0, 5, 9)
    X, Y = g.mesh()
    out = apply_stencil(X * Y, derivative_kernel((1, 1), g.dx, g.dy))
    np.testing.assert_allclose(out, 1.0, atol=1e-12)


def test_kernel_bank_shares_footprint():
    g2 = GridSpec(0.0, 1.0, 0.0, 1.0, 5, 5)
    bank = kernel_bank(g2, ["u", "u_x", "u_yy", "lap"])
    assert {k.shape for k in bank.values()} == {(3, 3)}
    g1 = GridSpec.line(0.0, 1.0, 5)
    assert {k.shape for k in kernel_bank(g1, ["u", "u_x", "u_xx"]).values()} == {(1, 3)}


def test_transpose_of_zero_is_zero():
    k = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal(apply_stencil_transpose(np.zeros((3, 4)), k, 5, 6), 0.0)


def test_transpose_single_tap_is_rotated_kernel():
    rng = np.random.default_rng(1)
    k = rng.normal(size=(3, 3))
    g = 1.7
    out = apply_stencil_transpose(np.array([[g]]), k, 3, 3)
    # a single output tap spreads g * K back over its footprint
    np.testing.assert_allclose(out, g * k, rtol=1e-15)


def test_transpose_shape_mismatch():
    with pytest.raises(ValueError):
        apply_stencil_transpose(np.zeros((3, 3)), np.ones((3, 3)), 6, 6)


def test_matches_brute_force():
    rng = np.random.default_rng(2)
    f = rng.normal(size=(6, 8))
    k = rng.normal(size=(3, 5))
    np.testing.assert_allclose(apply_stencil(f, k), brute_correlate(f, k), rtol=1e-12, atol=1e-13)


def test_big_kernel_path_matches_brute_force():
    # output smaller than kernel triggers the output-major loop
    rng = np.random.default_rng(3)
    f = rng.normal(size=(6, 9))
    k = rng.normal(size=(5, 7))
    np.testing.assert_allclose(apply_stencil(f, k), brute_correlate(f, k), rtol=1e-12, atol=1e-13)


shapes = st.tuples(st.integers(3, 9), st.integers(3, 9), st.sampled_from([1, 3, 5]), st.sampled_from([1, 3, 5]))


@settings(max_examples=60, deadline=None)
@given(shapes, st.integers(0, 2**31 - 1))
def test_adjoint_identity(shape, seed):
    rows, cols, p, q = shape
    if p > rows or q > cols:
        return
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(rows, cols))
    K = rng.normal(size=(p, q))
    G = rng.normal(size=(rows - p + 1, cols - q + 1))
    lhs = np.sum(apply_stencil(F, K) * G)
    rhs = np.sum(F * apply_stencil_transpose(G, K, rows, cols))
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), abs(rhs), 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    F, G = rng.normal(size=(2, 7, 6))
    K = rng.normal(size=(3, 3))
    lhs = apply_stencil(a * F + b * G, K)
    rhs = a * apply_stencil(F, K) + b * apply_stencil(G, K)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + abs(a) + abs(b)) * 10)
