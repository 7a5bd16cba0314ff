import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial import legendre as npleg

from spoc import lgr


def radau_poly(n):
    """Coefficients (Legendre basis) of P_{n-1} + P_n."""
    c = np.zeros(n + 1)
    c[n - 1] = c[n] = 1.0
    return c


def bisect_roots(n, samples=20000):
    """Independent root oracle: sign changes of P_{n-1}+P_n, refined by bisection."""
    c = radau_poly(n)
    f = lambda x: npleg.legval(x, c)
    xs = np.linspace(-1.0, 1.0, samples)
    roots = [-1.0]
    vals = f(xs)
    for a, b, fa, fb in zip(xs[:-1], xs[1:], vals[:-1], vals[1:]):
        if a == -1.0:
            continue
        if fa * fb < 0:
            for _ in range(200):
                m = 0.5 * (a + b)
                if f(a) * f(m) <= 0:
                    b = m
                else:
                    a = m
            roots.append(0.5 * (a + b))
    return np.array(roots)


def test_nodes_small_cases():
    assert lgr.lgr_nodes(1).tolist() == [-1.0]
    np.testing.assert_allclose(lgr.lgr_nodes(2), [-1.0, 1.0 / 3.0], atol=1e-15)


def test_nodes_match_bisection_oracle():
    np.testing.assert_allclose(lgr.lgr_nodes(5), bisect_roots(5), atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3, 7, 16, 33, 64])
def test_nodes_are_radau_roots(n):
    x = lgr.lgr_nodes(n)
    assert x[0] == -1.0
    assert np.all(np.diff(x) > 0) and np.all(x < 1.0)
    # scale by the derivative so the check is relative to the slope
    c = radau_poly(n)
    res = npleg.legval(x, c) / np.maximum(1.0, np.abs(npleg.legval(x, npleg.legder(c))))
    assert np.max(np.abs(res)) < 1e-14


def test_nodes_invalid():
    with pytest.raises(ValueError):
        lgr.lgr_nodes(0)


def test_weights_small_cases():
    np.testing.assert_allclose(lgr.lgr_weights(1), [2.0])
    np.testing.assert_allclose(lgr.lgr_weights(2), [0.5, 1.5], atol=1e-15)


@pytest.mark.parametrize("n", range(1, 41))
def test_quadrature_exact_to_degree_2n_minus_2(n):
    x, w = lgr.lgr_nodes(n), lgr.lgr_weights(n)
    assert np.all(w > 0)
    assert abs(w.sum() - 2.0) < 1e-13
    for deg in range(0, 2 * n - 1):
        exact = 0.0 if deg % 2 else 2.0 / (deg + 1)
        assert abs(w @ x**deg - exact) < 1e-10


@pytest.mark.parametrize("n", range(1, 41))
def test_differentiation_exact_to_degree_n(n):
    g = lgr.lgr_grid(n)
    D = g.diff_matrix
    assert D.shape == (n, n + 1)
    assert np.max(np.abs(D.sum(axis=1))) < 1e-12 * max(1, n * n)
    tol = 1e-10 if n <= 25 else 1e-8
    tc = g.colloc_nodes
    for deg in range(0, n + 1):
        # Legendre P_deg keeps the magnitudes O(1) for large degrees
        c = np.zeros(deg + 1)
        c[deg] = 1.0
        got = D @ npleg.legval(g.nodes, c)
        want = npleg.legval(tc, npleg.legder(c))
        assert np.max(np.abs(got - want)) <= tol * max(1.0, np.max(np.abs(want)))


def test_differentiation_examples():
    g = lgr.lgr_grid(3)
    np.testing.assert_allclose(g.diff_matrix @ np.full(4, 7.0), 0.0, atol=1e-13)
    np.testing.assert_allclose(g.diff_matrix @ g.nodes**2, 2 * g.colloc_nodes, atol=1e-12)


@pytest.mark.parametrize("m", range(1, 41))
def test_integration_matrix_recovers_polynomials(m):
    ig = lgr.integration_matrix(m)
    tau = np.append(ig.nodes, 1.0)
    for deg in range(0, m):
        c = np.zeros(deg + 1)
        c[deg] = 1.0
        p = npleg.legval(tau, c)
        g = npleg.legval(ig.nodes, npleg.legder(c))
        got = ig.int_matrix @ g
        np.testing.assert_allclose(got, p[1:] - p[0], atol=1e-12 * max(1, m))


def test_integration_matrix_examples():
    ig = lgr.integration_matrix(3)
    tau = np.append(ig.nodes, 1.0)
    np.testing.assert_allclose(ig.int_matrix @ np.zeros(3), 0.0)
    np.testing.assert_allclose(ig.int_matrix @ np.ones(3), tau[1:] - tau[0], atol=1e-13)
    ig = lgr.integration_matrix(4)
    tau = np.append(ig.nodes, 1.0)
    np.testing.assert_allclose(ig.int_matrix @ (3 * ig.nodes**2), tau[1:] ** 3 + 1.0, atol=1e-12)


def test_differentiate_then_integrate():
    n = 9
    g = lgr.lgr_grid(n)
    ig = lgr.integration_matrix(n)
    p = g.nodes**7 - 2 * g.nodes**3
    dp = g.diff_matrix @ p
    np.testing.assert_allclose(ig.int_matrix @ dp, p[1:] - p[0], atol=1e-10)


def test_interpolate_examples():
    nodes = lgr.lgr_grid(4).nodes
    vals = np.sin(nodes)
    assert lgr.interpolate(vals, nodes, nodes[2]) == vals[2]
    lin = 3.0 * nodes - 1.0
    assert abs(lgr.interpolate(lin, nodes, 0.5 * (nodes[1] + nodes[2])) - 0.5 * (lin[1] + lin[2])) < 1e-14
    assert abs(lgr.interpolate(nodes**4, nodes, 0.37) - 0.37**4) < 1e-12


@given(st.floats(-1.0, 1.0), st.integers(2, 20))
def test_interpolation_reproduces_polynomials(q, n):
    nodes = lgr.lgr_grid(n).nodes
    c = np.arange(1, n + 2, dtype=float)[::-1] / (n + 1)
    assert abs(lgr.interpolate(npleg.legval(nodes, c), nodes, q) - npleg.legval(q, c)) < 1e-11


def test_interpolate_duplicate_nodes():
    with pytest.raises(ValueError):
        lgr.interpolate([1.0, 2.0, 3.0], [0.0, 0.5, 0.5], 0.2)


def test_map_time():
    assert lgr.map_time(-1.0, 0.0, 1.0) == 0.0
    assert lgr.map_time(1.0, 0.0, 1.0) == 1.0
    assert lgr.map_time(0.0, 2.0, 6.0) == 4.0
    with pytest.raises(ValueError):
        lgr.map_time(0.0, 1.0, 1.0)


@settings(max_examples=50)
@given(st.floats(-1e3, 1e3), st.floats(1e-3, 1e3), st.floats(-1, 1))
def test_map_time_is_affine(a, width, tau):
    b = a + width
    t = lgr.map_time(tau, a, b)
    assert a - 1e-9 * abs(a) - 1e-12 <= t <= b + 1e-9 * abs(b) + 1e-12


def test_grids_are_deterministic():
    a, b = lgr.lgr_grid(17), lgr.lgr_grid(17)
    assert np.array_equal(a.diff_matrix, b.diff_matrix) and np.array_equal(a.weights, b.weights)
