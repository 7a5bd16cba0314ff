import numpy as np
import pytest
import scipy.sparse as sp

from spoc.mesh import MeshStructure
from spoc.model import initial_guess
from spoc.nlp import NlpProblem, SolverOptions, kkt_report, register_backend, solve
from spoc.problems import bryson_denham
from spoc.transcription import assemble

INF = np.inf


def dense_problem(n, f, g, xl, xu, c=None, J=None, cl=(), cu=(), H=None):
    m = len(cl)
    return NlpProblem(
        n=n, m=m, x_lower=xl, x_upper=xu, c_lower=cl, c_upper=cu,
        objective=f, gradient=g,
        constraints=c or (lambda x: np.zeros(0)),
        jacobian=J or (lambda x: sp.csr_matrix((0, n))),
        hessian=H,
    )


def test_bound_constrained_quadratic():
    # min (x-1)^2 with x >= 2: the bound is active and z = 2
    p = dense_problem(
        1, lambda x: (x[0] - 1) ** 2, lambda x: np.array([2 * (x[0] - 1)]), [2.0], [INF],
        H=lambda x, s, lam: sp.csr_matrix([[2.0 * s]]),
    )
    r = solve(p, [5.0])
    assert r.status == "optimal"
    assert r.x[0] == pytest.approx(2.0, abs=1e-8)
    assert r.z_lower[0] == pytest.approx(2.0, rel=1e-6)


def test_equality_qp():
    # min sum x^2 s.t. sum x = 1 -> x_i = 1/5
    n = 5
    p = dense_problem(
        n, lambda x: x @ x, lambda x: 2 * x, np.full(n, -INF), np.full(n, INF),
        c=lambda x: np.array([x.sum()]), J=lambda x: sp.csr_matrix(np.ones((1, n))),
        cl=[1.0], cu=[1.0], H=lambda x, s, lam: sp.identity(n, format="csr") * 2 * s,
    )
    r = solve(p, np.zeros(n))
    assert r.success
    np.testing.assert_allclose(r.x, 0.2, atol=1e-9)
    assert r.multipliers[0] == pytest.approx(-0.4, rel=1e-7)


def rosenbrock():
    f = lambda x: 100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2
    g = lambda x: np.array([-400 * x[0] * (x[1] - x[0] ** 2) - 2 * (1 - x[0]), 200 * (x[1] - x[0] ** 2)])
    H = lambda x, s, lam: sp.csr_matrix(s * np.array([[1200 * x[0] ** 2 - 400 * x[1] + 2, -400 * x[0]], [-400 * x[0], 200.0]]))
    return dense_problem(2, f, g, [-INF, -INF], [INF, INF], H=H)


def test_rosenbrock():
    r = solve(rosenbrock(), [-1.2, 1.0])
    assert r.status == "optimal"
    np.testing.assert_allclose(r.x, [1.0, 1.0], atol=1e-7)


def hs071():
    def f(x):
        return x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2]

    def g(x):
        return np.array([
            x[3] * (2 * x[0] + x[1] + x[2]), x[0] * x[3], x[0] * x[3] + 1.0, x[0] * (x[0] + x[1] + x[2]),
        ])

    def c(x):
        return np.array([np.prod(x), x @ x])

    def J(x):
        p = np.prod(x)
        return sp.csr_matrix(np.vstack([p / x, 2 * x]))

    def H(x, s, lam):
        Hf = np.array([
            [2 * x[3], x[3], x[3], 2 * x[0] + x[1] + x[2]],
            [x[3], 0, 0, x[0]],
            [x[3], 0, 0, x[0]],
            [2 * x[0] + x[1] + x[2], x[0], x[0], 0],
        ])
        Hp = np.zeros((4, 4))
        for i in range(4):
            for j in range(4):
                if i != j:
                    Hp[i, j] = np.prod([x[k] for k in range(4) if k not in (i, j)])
        return sp.csr_matrix(s * Hf + lam[0] * Hp + lam[1] * 2 * np.eye(4))

    return dense_problem(4, f, g, np.ones(4), np.full(4, 5.0), c=c, J=J, cl=[25.0, 40.0], cu=[INF, 40.0], H=H)


HS071_X = [1.0, 4.74299963, 3.82114998, 1.37940829]


def test_hs071():
    r = solve(hs071(), [1.0, 5.0, 5.0, 1.0])
    assert r.status == "optimal"
    assert r.objective == pytest.approx(17.014017, abs=1e-6)
    np.testing.assert_allclose(r.x, HS071_X, atol=1e-6)
    rep = kkt_report(hs071(), r.x, r.multipliers, r.z_lower, r.z_upper)
    assert rep["stationarity"] <= 1e-6
    assert rep["primal_infeasibility"] <= 1e-8


def test_hs071_finite_difference_derivatives():
    p = hs071()
    p.hessian = None
    r = solve(p, [1.0, 5.0, 5.0, 1.0], SolverOptions(derivatives="finite-difference"))
    assert r.success
    assert r.objective == pytest.approx(17.014017, abs=1e-5)
    with pytest.raises(ValueError, match="finite-difference"):
        solve(p, [1.0, 5.0, 5.0, 1.0])


def test_solver_is_deterministic():
    a = solve(hs071(), [1.0, 5.0, 5.0, 1.0])
    b = solve(hs071(), [1.0, 5.0, 5.0, 1.0])
    assert np.array_equal(a.x, b.x) and a.iterations == b.iterations


def test_max_iter_status():
    r = solve(rosenbrock(), [-1.2, 1.0], SolverOptions(max_iter=2))
    assert r.status == "max-iter" and not r.success


def test_infeasible_problem_reported():
    # x^2 = -1 has no solution
    p = dense_problem(
        1, lambda x: 0.0 * x[0], lambda x: np.zeros(1), [-INF], [INF],
        c=lambda x: np.array([x[0] ** 2]), J=lambda x: sp.csr_matrix([[2 * x[0]]]),
        cl=[-1.0], cu=[-1.0], H=lambda x, s, lam: sp.csr_matrix([[2 * lam[0]]]),
    )
    r = solve(p, [0.5], SolverOptions(max_iter=200))
    assert not r.success
    assert r.constr_viol > 0.5


def test_input_validation():
    with pytest.raises(ValueError):
        solve(rosenbrock(), [1.0])
    with pytest.raises(ValueError):
        solve(rosenbrock(), [np.nan, 1.0])
    with pytest.raises(ValueError):
        SolverOptions(tol=0.0)
    with pytest.raises(ValueError):
        SolverOptions(derivatives="magic")
    with pytest.raises(ValueError):
        dense_problem(1, None, None, [1.0], [0.0])
    with pytest.raises(ValueError):
        solve(rosenbrock(), [0.0, 0.0], SolverOptions(backend="nonexistent"))


def test_custom_backend_is_called():
    seen = {}

    def backend(problem, x0, options):
        seen["n"] = problem.n
        return solve(problem, x0, SolverOptions())

    register_backend("wrapped", backend)
    r = solve(rosenbrock(), [-1.2, 1.0], SolverOptions(backend="wrapped"))
    assert seen["n"] == 2 and r.success


def test_kkt_report_examples():
    p = dense_problem(
        1, lambda x: (x[0] - 1) ** 2, lambda x: np.array([2 * (x[0] - 1)]), [2.0], [INF],
        H=lambda x, s, lam: sp.csr_matrix([[2.0 * s]]),
    )
    # optimum: bound multiplier is inferred from the residual
    rep = kkt_report(p, [2.0])
    assert rep["stationarity"] == 0.0 and rep["primal_infeasibility"] == 0.0
    # interior non-stationary point
    rep = kkt_report(p, [3.0])
    assert rep["stationarity"] == pytest.approx(4.0)
    assert rep["worst_stationarity"][0][0] == "x0"
    # infeasible point with a named row
    q = hs071()
    q.row_labels = ["prod", "sphere"]
    rep = kkt_report(q, np.ones(4), np.zeros(2))
    assert rep["primal_infeasibility"] == pytest.approx(36.0)
    assert rep["worst_rows"][0] == ("sphere", 36.0)
    # a positive multiplier on a lower-bounded-only row is dual infeasible
    rep = kkt_report(q, np.array(HS071_X), np.array([0.5, 0.0]))
    assert rep["dual_infeasibility"] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        kkt_report(q, np.ones(3))


def test_single_domain_bryson_denham():
    # hp-only transcription: the kink at the junctions limits accuracy to ~1e-5
    bp = bryson_denham()
    ocp = bp.ocp
    mesh = MeshStructure.single(ocp.t0, ocp.tf, 10, 4)
    tr = assemble(ocp, mesh)
    x0 = tr.initial_point(initial_guess(ocp, [0.0, 1.0]))
    r = solve(tr.problem(), x0)
    assert r.success
    err = abs(r.objective - bp.analytic.cost) / bp.analytic.cost
    print("single-domain relative cost error", err)
    # reference magnitude for this mesh is about 4e-5; allow a factor of ten
    assert 1e-7 < err < 4.19e-4
