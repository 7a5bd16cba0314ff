import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spoc import autodiff as ad
from spoc.autodiff import Dual
from spoc.errors import EvaluationError, OrderDetectionError
from spoc.problems import bryson_denham, reentry_vehicle

finite = st.floats(-3.0, 3.0, allow_nan=False)


def d1(fn, x):
    """Value and derivative of a scalar function via one seeded Dual."""
    tag = ad.new_tag()
    out = fn(Dual(x, {0: 1.0}, tag))
    return ad.value_of(out), ad.value_of(ad.partial(out, tag, 0))


def central(fn, x, h=1e-6):
    return (fn(x + h) - fn(x - h)) / (2 * h)


@settings(max_examples=60)
@given(finite, finite, finite)
def test_linearity(a, b, x):
    tag = ad.new_tag()
    X = Dual(x, {0: 1.0}, tag)
    Y = Dual(2 * x, {1: 1.0}, tag)
    out = a * X + b * Y
    assert out.der[0] == pytest.approx(a) and out.der[1] == pytest.approx(b)


SMOOTH = [
    lambda x: x * x * x - 2 * x,
    lambda x: np.sin(x) * np.cos(2 * x),
    lambda x: np.exp(0.3 * x) / (2 + x * x),
    lambda x: np.sqrt(1 + x * x) ** 3,
    lambda x: np.arctan(x) + np.tanh(x) * np.sinh(0.5 * x),
    lambda x: np.log(2 + np.sin(x)) ** 2.5,
    lambda x: (1 + x * x) ** (0.5 + 0.1 * x),
]


@settings(max_examples=40)
@given(st.sampled_from(range(len(SMOOTH))), st.floats(-2.0, 2.0))
def test_chain_and_product_rules_match_finite_differences(i, x):
    fn = SMOOTH[i]
    val, der = d1(fn, x)
    assert val == pytest.approx(fn(x), rel=1e-14, abs=1e-14)
    assert der == pytest.approx(central(fn, x), rel=1e-6, abs=1e-7)


def test_second_derivative_by_nesting():
    fn = lambda x: np.sin(x) * x**3
    _, grad, hess = ad.point_hessian(lambda z: fn(z[0]), [0.7])
    x = 0.7
    exact = -np.sin(x) * x**3 + 6 * np.cos(x) * x**2 + 6 * x * np.sin(x)
    assert hess[0, 0] == pytest.approx(exact, rel=1e-13)
    assert grad[0] == pytest.approx(np.cos(x) * x**3 + 3 * x**2 * np.sin(x), rel=1e-13)


def test_vectorized_duals():
    x = np.linspace(0.1, 1.0, 5)
    val, der = d1(lambda v: v * np.exp(v), x)
    np.testing.assert_allclose(der, (1 + x) * np.exp(x))


def test_jacobian_of_linear_map_is_exact():
    A = np.array([[1.0, -2.0, 0.0], [0.5, 0.0, 3.0]])
    J = ad.jacobian(lambda z: [sum(A[i, j] * z[j] for j in range(3)) for i in range(2)], [0.3, -1.0, 2.0])
    np.testing.assert_array_equal(J.toarray(), A)


def test_jacobian_bryson_denham_dynamics():
    f = bryson_denham().ocp.dynamics
    J = ad.jacobian(lambda z: f(z[:2], z[2:], 0.0), [0.1, 0.2, 0.3])
    np.testing.assert_array_equal(J.toarray(), [[0, 1, 0], [0, 0, 1]])


def test_jacobian_nonfinite_reports_location():
    with pytest.raises(EvaluationError, match="row 0, column 0"):
        ad.jacobian(lambda z: [np.sqrt(z[0])], [0.0])


def _fd_jac(fn, z, rel=1e-6):
    z = np.asarray(z, float)
    cols = []
    for k in range(z.size):
        h = rel * max(1.0, abs(z[k]))
        zp, zm = z.copy(), z.copy()
        zp[k] += h
        zm[k] -= h
        cols.append((np.asarray(fn(zp)) - np.asarray(fn(zm))) / (2 * h))
    return np.column_stack(cols)


@pytest.mark.parametrize("make", [bryson_denham, reentry_vehicle])
def test_benchmark_dynamics_jacobian_vs_central_differences(make):
    ocp = make().ocp
    rng = np.random.default_rng(7)
    lo = np.concatenate([ocp.y_lower, ocp.u_lower])
    hi = np.concatenate([ocp.y_upper, ocp.u_upper])
    lo = np.where(np.isfinite(lo), lo, -2.0)
    hi = np.where(np.isfinite(hi), hi, 2.0)
    if make is reentry_vehicle:
        # keep clear of v ~ 0 and gamma ~ +-90 deg where the model is singular
        lo[3], hi[3] = 1000.0, 8000.0
        lo[4], hi[4] = -1.0, 1.0
        lo[2], hi[2] = -1.0, 1.0
    ny = ocp.n_y
    fn = lambda z: np.array(ocp.dynamics(list(z[:ny]), list(z[ny:]), 0.0), dtype=float)
    for _ in range(50):
        z = lo + (hi - lo) * rng.random(lo.size)
        J = ad.jacobian(lambda v: ocp.dynamics(v[:ny], v[ny:], 0.0), z).toarray()
        F = _fd_jac(fn, z)
        scale = np.maximum(np.abs(J), np.abs(F)).max(axis=1, keepdims=True) + 1e-300
        assert np.max(np.abs(J - F) / scale) <= 1e-5


def test_dual_evaluation_matches_float_evaluation():
    ocp = reentry_vehicle().ocp
    y = [50000.0, 0.1, 0.2, 5000.0, -0.05, 1.2]
    u = [0.3, -0.5]
    plain = ocp.dynamics(y, u, 0.0)
    tag = ad.new_tag()
    dual = ocp.dynamics([Dual(v, {i: 1.0}, tag) for i, v in enumerate(y)], u, 0.0)
    for a, b in zip(plain, dual):
        assert ad.value_of(b) == a


# -- total time derivatives and order detection ---------------------------


def _bd_f(y, u, t):
    return [y[1], u[0]]


def test_total_derivative_examples():
    probes = ad.make_probes([(-1, 1), (-1, 1)], [(-2, 2)], (0, 1), n=8)
    g = ad.total_time_derivative(lambda y, u, t: y[0] - 0.125, _bd_f)
    np.testing.assert_allclose(g(probes.y, probes.u, probes.t), probes.y[1])
    zero = ad.total_time_derivative(lambda y, u, t: 3.0, _bd_f)
    assert np.all(np.asarray(zero(probes.y, probes.u, probes.t)) == 0.0)
    one = ad.total_time_derivative(lambda y, u, t: t, _bd_f)
    np.testing.assert_allclose(one(probes.y, probes.u, probes.t), 1.0)


def test_total_derivative_nonfinite():
    g = ad.total_time_derivative(lambda y, u, t: np.log(y[0]), _bd_f)
    with pytest.raises(EvaluationError):
        g([0.0, 1.0], [0.0], 0.0)


def test_depends_on_control_examples():
    probes = ad.make_probes([(0.5, 2.0)], [(-1, 1)], (0, 1))
    assert ad.depends_on_control(lambda y, u, t: u[0], probes)
    assert not ad.depends_on_control(lambda y, u, t: y[0] ** 2, probes)
    # gradient oracle is y0, bounded away from zero by the probe box
    grad = ad.control_gradient(lambda y, u, t: y[0] * u[0], probes)
    np.testing.assert_allclose(grad[0], np.abs(probes.y[0]))
    assert ad.depends_on_control(lambda y, u, t: y[0] * u[0], probes)


def test_stack_bryson_denham_is_second_order():
    ocp = bryson_denham().ocp
    stack = ocp.derivative_stack(0)
    assert stack.order == 2
    assert stack.control_dependent == [False, False, True]
    p = ocp.probes(n=20)
    np.testing.assert_allclose(stack.level(0)(p.y, p.u, p.t), p.y[0] - 0.125)
    np.testing.assert_allclose(stack.level(1)(p.y, p.u, p.t), p.y[1])
    np.testing.assert_allclose(stack.level(2)(p.y, p.u, p.t), p.u[0])


def test_stack_reentry_is_first_order():
    assert reentry_vehicle().ocp.derivative_stack(0).order == 1


def test_scalar_system_first_order():
    probes = ad.make_probes([(-1, 1)], [(-1, 1)], (0, 1))
    stack = ad.detect_constraint_order(lambda y, u, t: y[0], lambda y, u, t: [u[0]], probes)
    assert stack.order == 1 and len(stack.derivative_fns) == 2


def test_order_detection_failure():
    probes = ad.make_probes([(-1, 1), (-1, 1)], [(-1, 1)], (0, 1))
    f = lambda y, u, t: [y[1], -y[0]]  # control never enters
    with pytest.raises(OrderDetectionError):
        ad.detect_constraint_order(lambda y, u, t: y[0], f, probes, q_max=3)


@pytest.mark.parametrize("make", [bryson_denham, reentry_vehicle])
def test_stack_levels_consistent_with_chain_rule(make):
    ocp = make().ocp
    stack = ocp.derivative_stack(0)
    p = ocp.probes(n=100, seed=3)
    for k in range(stack.order):
        # below the explicit level the control gradient vanishes
        assert np.max(ad.control_gradient(stack.level(k), p)) <= 1e-10
        # c^(k+1) = dc^(k)/dy . f + dc^(k)/dt, checked by central differences
        nxt = np.asarray(stack.level(k + 1)(p.y, p.u, p.t), float)
        f = [np.asarray(v, float) for v in ocp.dynamics(p.y, p.u, p.t)]
        acc = np.zeros(p.size)
        for i in range(ocp.n_y):
            h = 1e-6 * np.maximum(1.0, np.abs(p.y[i]))
            yp = [c.copy() for c in p.y]
            ym = [c.copy() for c in p.y]
            yp[i] += h
            ym[i] -= h
            dc = (np.asarray(stack.level(k)(yp, p.u, p.t)) - np.asarray(stack.level(k)(ym, p.u, p.t))) / (2 * h)
            acc += dc * f[i]
        np.testing.assert_allclose(nxt, acc, rtol=1e-5, atol=1e-8 * np.max(np.abs(nxt)))
    assert np.max(ad.control_gradient(stack.highest, p)) > 1e-10


def test_tangency_residuals():
    stack = bryson_denham().ocp.derivative_stack(0)
    np.testing.assert_allclose(ad.tangency_residuals(stack, [0.125, 0.0], 0.3), [0.0, 0.0])
    np.testing.assert_allclose(ad.tangency_residuals(stack, [0.0, 1.0], 0.0), [-0.125, 1.0])
    q1 = reentry_vehicle().ocp.derivative_stack(0)
    assert len(ad.tangency_residuals(q1, [60000.0, 0, 0, 6000.0, 0, 0], 0.0)) == 1


def test_differentiation_matrix_along_oracle_matches_first_level():
    from spoc import lgr

    bp = bryson_denham()
    stack = bp.ocp.derivative_stack(0)
    g = lgr.lgr_grid(12)
    t = lgr.map_time(g.nodes, 0.0, 0.3)  # inside the first unconstrained arc
    Y = bp.analytic.state(t)
    c = Y[:, 0] - 0.125
    dc = g.diff_matrix @ c / 0.15
    want = np.asarray(stack.level(1)([Y[:-1, 0], Y[:-1, 1]], [np.zeros(12)], t[:-1]))
    np.testing.assert_allclose(dc, want, atol=1e-6)


def test_determinism_of_order_detection():
    ocp = reentry_vehicle().ocp
    a = ocp.probes(seed=0)
    b = ocp.probes(seed=0)
    assert all(np.array_equal(x, y) for x, y in zip(a.y + a.u, b.y + b.u))
    assert math.isclose(float(a.t.sum()), float(b.t.sum()))
