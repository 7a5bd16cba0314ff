"""Sparse nonlinear programming: problem interface and a primal-dual
interior-point solver with a filter line search.

The problem is ``min f(x)`` subject to ``c_lower <= c(x) <= c_upper`` and
``x_lower <= x <= x_upper``.  Inequality rows receive slack variables so the
barrier subproblem only has equality constraints; the Newton system is the
symmetric indefinite KKT matrix, factorized by SuperLU with symmetric
diagonal pivoting so that its inertia can be read off and corrected.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EvaluationError

STATUSES = ("optimal", "acceptable", "max-iter", "infeasible", "error")


@dataclass
class NlpProblem:
    """Callbacks and bounds of a sparse NLP.

    ``hessian(x, obj_factor, lam)`` returns the Hessian of
    ``obj_factor * f + lam @ c``; either triangle or both may be supplied as
    long as the result is the full symmetric matrix.
    """

    n: int
    m: int
    x_lower: np.ndarray
    x_upper: np.ndarray
    c_lower: np.ndarray
    c_upper: np.ndarray
    objective: Callable
    gradient: Callable
    constraints: Callable
    jacobian: Callable
    hessian: Optional[Callable] = None
    row_labels: Optional[list] = None
    var_labels: Optional[list] = None

    def __post_init__(self):
        for name, size in (("x_lower", self.n), ("x_upper", self.n), ("c_lower", self.m), ("c_upper", self.m)):
            arr = np.asarray(getattr(self, name), dtype=float).ravel()
            if arr.size != size:
                raise ValueError(f"{name} has length {arr.size}, expected {size}")
            setattr(self, name, arr)
        if np.any(self.x_lower > self.x_upper) or np.any(self.c_lower > self.c_upper):
            raise ValueError("inverted bounds")

    def row_label(self, i):
        return self.row_labels[i] if self.row_labels else f"row{i}"

    def var_label(self, j):
        return self.var_labels[j] if self.var_labels else f"x{j}"


@dataclass
class SolverOptions:
    tol: float = 1e-8
    constr_viol_tol: float = 1e-8
    dual_inf_tol: float = 1.0
    compl_inf_tol: float = 1e-4
    acceptable_tol: float = 1e-6
    acceptable_constr_viol_tol: float = 1e-6
    acceptable_iter: int = 15
    max_iter: int = 3000
    scaling: bool = True
    scaling_max_gradient: float = 100.0
    derivatives: str = "ad"  # "ad" or "finite-difference"
    mu_init: float = 0.1
    mu_min: float = 1e-11
    bound_push: float = 1e-2
    bound_frac: float = 1e-2
    bound_relax_factor: float = 1e-10
    second_order_correction: bool = True
    max_soc: int = 4
    max_restoration_iter: int = 300
    time_limit: Optional[float] = None
    log_file: Optional[str] = None
    print_level: int = 0
    backend: Union[str, Callable] = "builtin"

    def __post_init__(self):
        if not self.tol > 0 or not self.constr_viol_tol > 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")
        if self.derivatives not in ("ad", "finite-difference"):
            raise ValueError(f"unknown derivative source {self.derivatives!r}")


@dataclass
class SolveResult:
    x: np.ndarray
    status: str
    objective: float
    kkt_error: float
    constr_viol: float
    iterations: int
    wall_time: float
    multipliers: Optional[np.ndarray] = None
    z_lower: Optional[np.ndarray] = None
    z_upper: Optional[np.ndarray] = None
    message: str = ""
    history: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.status in ("optimal", "acceptable")


_BACKENDS: dict = {}


def register_backend(name: str, fn: Callable):
    """Register ``fn(problem, x0, options) -> SolveResult`` under ``name``."""
    _BACKENDS[name] = fn


# ---------------------------------------------------------------------------
# evaluation wrapper: NLP scaling and finite differences


class _Scaled:
    def __init__(self, prob: NlpProblem, obj_scale: float, row_scale: np.ndarray):
        self.p = prob
        self.df = obj_scale
        self.dc = row_scale
        self._cache: dict = {}

    def _get(self, name, x, fn):
        key = (name, x.tobytes())
        hit = self._cache.get(name)
        if hit is not None and hit[0] == key:
            return hit[1]
        val = fn()
        self._cache[name] = (key, val)
        return val

    def f(self, x):
        return self._get("f", x, lambda: self.df * float(self.p.objective(x)))

    def g(self, x):
        return self._get("g", x, lambda: self.df * np.asarray(self.p.gradient(x), float))

    def c(self, x):
        if self.p.m == 0:
            return np.zeros(0)
        return self._get("c", x, lambda: self.dc * np.asarray(self.p.constraints(x), float))

    def J(self, x):
        if self.p.m == 0:
            return sp.csr_matrix((0, self.p.n))
        return self._get("J", x, lambda: (sp.diags(self.dc) @ sp.csr_matrix(self.p.jacobian(x))).tocsr())

    def H(self, x, sigma, lam):
        return sp.csr_matrix(self.p.hessian(x, sigma * self.df, lam * self.dc))


def _color_columns(pattern: sp.spmatrix) -> np.ndarray:
    """Greedy column coloring: columns of one color share no row."""
    P = sp.csc_matrix(pattern)
    rows_of = [P.indices[P.indptr[j] : P.indptr[j + 1]] for j in range(P.shape[1])]
    color = np.full(P.shape[1], -1)
    used_rows: list = []
    for j, rows in enumerate(rows_of):
        for k, used in enumerate(used_rows):
            if not used.intersection(rows.tolist()):
                color[j] = k
                used.update(rows.tolist())
                break
        else:
            color[j] = len(used_rows)
            used_rows.append(set(rows.tolist()))
    return color


def finite_difference_problem(prob: NlpProblem, x_ref, step: float = 1e-7) -> NlpProblem:
    """Copy of ``prob`` whose gradient, Jacobian and Hessian come from
    forward differences (Hessian: differences of the Lagrangian gradient).

    Sparsity patterns are taken from the supplied callbacks at ``x_ref`` and
    compressed by column coloring.
    """
    x_ref = np.asarray(x_ref, float)
    n = prob.n
    jpat = sp.csr_matrix(prob.jacobian(x_ref)) if prob.m else sp.csr_matrix((0, n))
    jpat = (abs(jpat) + 0 * jpat).astype(bool).astype(float)
    jpat = sp.csr_matrix((np.ones(jpat.nnz), jpat.indices, jpat.indptr), shape=jpat.shape)
    jcolor = _color_columns(jpat) if prob.m else np.zeros(n, int)
    hpat = (jpat.T @ jpat + sp.eye(n)).tocsr()
    if prob.hessian is not None:
        hh = sp.csr_matrix(prob.hessian(x_ref, 1.0, np.ones(prob.m)))
        hpat = hpat + sp.csr_matrix((np.ones(hh.nnz), hh.indices, hh.indptr), shape=hh.shape)
    hpat = (hpat != 0).astype(float)
    hcolor = _color_columns(hpat)

    def hvec(x):
        return step * np.maximum(1.0, np.abs(x))

    def gradient(x):
        f0 = prob.objective(x)
        h = hvec(x)
        g = np.empty(n)
        for j in range(n):
            e = x.copy()
            e[j] += h[j]
            g[j] = (prob.objective(e) - f0) / h[j]
        return g

    def compressed(fun, x, pattern, color, h):
        base = fun(x)
        rows, cols, vals = [], [], []
        P = sp.csc_matrix(pattern)
        for k in range(color.max() + 1):
            cols_k = np.flatnonzero(color == k)
            e = x.copy()
            e[cols_k] += h[cols_k]
            diff = fun(e) - base
            for j in cols_k:
                r = P.indices[P.indptr[j] : P.indptr[j + 1]]
                rows.append(r)
                cols.append(np.full(r.size, j))
                vals.append(diff[r] / h[j])
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=pattern.shape
        )

    def jacobian(x):
        return compressed(lambda v: np.asarray(prob.constraints(v), float), x, jpat, jcolor, hvec(x))

    def hessian(x, sigma, lam):
        def grad_lag(v):
            out = sigma * gradient(v)
            if prob.m:
                out = out + jacobian(v).T @ lam
            return out

        H = compressed(grad_lag, x, hpat, hcolor, np.sqrt(step) * np.maximum(1.0, np.abs(x)))
        return 0.5 * (H + H.T)

    return NlpProblem(
        prob.n, prob.m, prob.x_lower, prob.x_upper, prob.c_lower, prob.c_upper,
        prob.objective, gradient, prob.constraints, jacobian, hessian,
        prob.row_labels, prob.var_labels,
    )


# ---------------------------------------------------------------------------
# the interior-point method


class _Log:
    def __init__(self, path, echo):
        self.fh = open(path, "w") if path else None
        self.echo = echo

    def __call__(self, line):
        if self.fh:
            self.fh.write(line + "\n")
        if self.echo:
            print(line)

    def close(self):
        if self.fh:
            self.fh.close()


def _relaxed(b, sign, factor):
    out = b.copy()
    fin = np.isfinite(b)
    out[fin] = b[fin] + sign * factor * np.maximum(1.0, np.abs(b[fin]))
    return out


def solve(problem: NlpProblem, x0, options: Optional[SolverOptions] = None) -> SolveResult:
    """Solve ``problem`` from ``x0`` (projected into the bounds)."""
    opts = options or SolverOptions()
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != problem.n:
        raise ValueError(f"x0 has length {x0.size}, expected {problem.n}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 contains non-finite entries")
    if opts.backend != "builtin":
        fn = opts.backend if callable(opts.backend) else _BACKENDS.get(opts.backend)
        if fn is None:
            raise ValueError(f"unknown NLP backend {opts.backend!r}")
        return fn(problem, x0, opts)
    if problem.hessian is None and opts.derivatives == "ad":
        raise ValueError("problem provides no Hessian; use derivatives='finite-difference'")
    if opts.derivatives == "finite-difference":
        problem = finite_difference_problem(problem, np.clip(x0, problem.x_lower, problem.x_upper))
    solver = _InteriorPoint(problem, opts)
    try:
        return solver.run(x0)
    finally:
        solver.log.close()


class _Restart(Exception):
    pass


class _InteriorPoint:
    # constants of the filter line search and barrier update
    kappa_eps = 10.0
    kappa_mu = 0.2
    theta_mu = 1.5
    tau_min = 0.99
    gamma_theta = 1e-5
    gamma_phi = 1e-8
    delta = 1.0
    s_theta = 1.1
    s_phi = 2.3
    eta_phi = 1e-8
    kappa_soc = 0.99
    kappa_sigma = 1e10
    s_max = 100.0
    kappa_d = 1e-5
    max_filter_resets = 5

    def __init__(self, prob: NlpProblem, opts: SolverOptions):
        self.prob = prob
        self.opts = opts
        self.log = _Log(opts.log_file, opts.print_level > 0)
        n, m = prob.n, prob.m
        self.n, self.m = n, m
        eq = prob.c_lower == prob.c_upper
        self.eq = eq
        self.ineq_rows = np.flatnonzero(~eq)
        self.nI = self.ineq_rows.size
        self.nW = n + self.nI
        # P maps slacks into their rows
        self.P = sp.csr_matrix(
            (np.ones(self.nI), (self.ineq_rows, np.arange(self.nI))), shape=(m, self.nI)
        )
        self.last_dw = 0.0
        self.history: list = []

    # -- problem pieces in slack form --

    def _bounds(self):
        p, o = self.prob, self.opts
        self.row_scale = np.ones(self.m)
        self.obj_scale = 1.0
        lw = np.concatenate([p.x_lower, p.c_lower[self.ineq_rows]])
        uw = np.concatenate([p.x_upper, p.c_upper[self.ineq_rows]])
        self.lw_orig, self.uw_orig = lw, uw

    def _set_scaling(self, x):
        p, o = self.prob, self.opts
        if o.scaling:
            try:
                g = np.asarray(p.gradient(x), float)
                gmax = np.max(np.abs(g)) if g.size else 0.0
                self.obj_scale = min(1.0, o.scaling_max_gradient / gmax) if gmax > 0 else 1.0
                if self.m:
                    J = sp.csr_matrix(p.jacobian(x))
                    rmax = np.zeros(self.m)
                    absJ = abs(J).tocsr()
                    nz = np.diff(absJ.indptr) > 0
                    rmax[nz] = absJ.max(axis=1).toarray().ravel()[nz]
                    with np.errstate(divide="ignore"):
                        self.row_scale = np.where(rmax > 0, np.minimum(1.0, o.scaling_max_gradient / rmax), 1.0)
            except EvaluationError:
                pass
        self.ev = _Scaled(p, self.obj_scale, self.row_scale)
        ds = self.row_scale[self.ineq_rows]
        fac = o.bound_relax_factor
        lw = _relaxed(self.lw_orig, -1.0, fac)
        uw = _relaxed(self.uw_orig, 1.0, fac)
        lw[self.n :] *= ds
        uw[self.n :] *= ds
        self.ceq = self.row_scale * np.where(self.eq, p.c_lower, 0.0)
        self.lw, self.uw = lw, uw
        self.hasL = np.isfinite(self.lw)
        self.hasU = np.isfinite(self.uw)
        self.onlyL = self.hasL & ~self.hasU
        self.onlyU = self.hasU & ~self.hasL

    def _h(self, w):
        x, s = w[: self.n], w[self.n :]
        return self.ev.c(x) - self.ceq - self.P @ s

    def _Jh(self, w):
        return sp.hstack([self.ev.J(w[: self.n]), -self.P], format="csr")

    def _grad_f(self, w):
        return np.concatenate([self.ev.g(w[: self.n]), np.zeros(self.nI)])

    def _slacks(self, w):
        sl = np.where(self.hasL, w - np.where(self.hasL, self.lw, 0.0), 1.0)
        su = np.where(self.hasU, np.where(self.hasU, self.uw, 0.0) - w, 1.0)
        return sl, su

    def _phi(self, w, mu):
        sl, su = self._slacks(w)
        if np.any(sl[self.hasL] <= 0) or np.any(su[self.hasU] <= 0):
            return np.inf
        val = self.ev.f(w[: self.n])
        val -= mu * (np.sum(np.log(sl[self.hasL])) + np.sum(np.log(su[self.hasU])))
        val += self.kappa_d * mu * (np.sum(sl[self.onlyL]) + np.sum(su[self.onlyU]))
        return val

    def _grad_phi(self, w, mu):
        sl, su = self._slacks(w)
        g = self._grad_f(w)
        g = g - np.where(self.hasL, mu / sl, 0.0) + np.where(self.hasU, mu / su, 0.0)
        g = g + self.kappa_d * mu * (self.onlyL.astype(float) - self.onlyU.astype(float))
        return g

    # -- initialization --

    def _push(self, v, lo, hi):
        o = self.opts
        v = v.copy()
        hasL, hasU = np.isfinite(lo), np.isfinite(hi)
        both = hasL & hasU
        pl = np.where(hasL, o.bound_push * np.maximum(1.0, np.abs(np.where(hasL, lo, 0.0))), 0.0)
        pu = np.where(hasU, o.bound_push * np.maximum(1.0, np.abs(np.where(hasU, hi, 0.0))), 0.0)
        width = np.where(both, np.where(both, hi, 0.0) - np.where(both, lo, 0.0), np.inf)
        pl = np.where(both, np.minimum(pl, o.bound_frac * width), pl)
        pu = np.where(both, np.minimum(pu, o.bound_frac * width), pu)
        v = np.where(hasL, np.maximum(v, np.where(hasL, lo, 0.0) + pl), v)
        v = np.where(hasU, np.minimum(v, np.where(hasU, hi, 0.0) - pu), v)
        mid = 0.5 * (np.where(both, lo, 0.0) + np.where(both, hi, 0.0))
        bad = both & ((v <= lo) | (v >= hi))
        v[bad] = mid[bad]
        return v

    def _ls_multipliers(self, w, zL, zU):
        if self.m == 0:
            return np.zeros(0)
        Jh = self._Jh(w)
        rhs = np.concatenate([-(self._grad_f(w) - zL + zU), np.zeros(self.m)])
        K = sp.bmat([[sp.eye(self.nW), Jh.T], [Jh, -1e-10 * sp.eye(self.m)]], format="csc")
        try:
            sol = spla.splu(K).solve(rhs)
        except RuntimeError:
            return np.zeros(self.m)
        lam = sol[self.nW :]
        if not np.all(np.isfinite(lam)) or np.max(np.abs(lam), initial=0.0) > 1e3:
            return np.zeros(self.m)
        return lam

    # -- linear algebra --

    def _factor_solve(self, W, Sigma, Jh, rhs_w, rhs_c, mu):
        """Solve the regularized KKT system, adjusting regularization as needed.

        Returns (dw, dlam, solve_fn) or raises _Restart when hopeless.
        """
        nW, m = self.nW, self.m
        dc = 0.0
        dw_reg = 0.0
        rhs = np.concatenate([rhs_w, rhs_c])
        for attempt in range(60):
            Hb = W + sp.diags(Sigma + dw_reg)
            if m:
                K = sp.bmat([[Hb, Jh.T], [Jh, -dc * sp.eye(m)]], format="csc")
            else:
                K = sp.csc_matrix(Hb)
            inertia_ok = None
            try:
                lu, inertia_ok = self._factor(K, Hb, Jh, dc)
                sol = lu.solve(rhs)
                for _ in range(3):
                    res = rhs - K @ sol
                    if np.linalg.norm(res, np.inf) <= 1e-12 * (1.0 + np.linalg.norm(rhs, np.inf)):
                        break
                    sol = sol + lu.solve(res)
                res = rhs - K @ sol
                ok = bool(np.all(np.isfinite(sol))) and np.linalg.norm(res, np.inf) <= 1e-6 * (
                    1.0 + np.linalg.norm(rhs, np.inf)
                )
            except RuntimeError:
                ok = False
            if not ok:
                if dc == 0.0 and m:
                    dc = 1e-8 * mu**0.25
                    continue
                dw_reg = self._next_reg(dw_reg)
                if dw_reg > 1e40:
                    raise _Restart("KKT system could not be factorized")
                continue
            dW = sol[:nW]
            if inertia_ok is None:
                # pivoting was not symmetric; fall back to a curvature test
                curv = dW @ (Hb @ dW)
                nrm = dW @ dW
                inertia_ok = not (curv < 1e-10 * nrm and nrm > 1e-30)
            if not inertia_ok:
                dw_reg = self._next_reg(dw_reg)
                if dw_reg > 1e40:
                    raise _Restart("Hessian regularization diverged")
                continue
            if dw_reg > 0:
                self.last_dw = dw_reg
            self.reg = dw_reg

            def again(rw, rc, _lu=lu, _K=K):
                r = np.concatenate([rw, rc])
                s = _lu.solve(r)
                s = s + _lu.solve(r - _K @ s)
                return s[:nW], s[nW:]

            return dW, sol[nW:], again
        raise _Restart("KKT regularization failed")

    def _factor(self, K, Hb, Jh, dc):
        """Factorize the KKT matrix.

        A diagonally pivoted LU in symmetric mode is an LDL^T factorization,
        so the signs of diag(U) give the inertia.  A tiny negative shift on the
        constraint block keeps its pivots nonzero; iterative refinement
        against the unshifted matrix removes its effect on the solution.
        Returns (lu, inertia_ok) with inertia_ok None if unknown.
        """
        nW, m = self.nW, self.m
        shift = max(dc, 1e-9) if m else 0.0
        Kf = K if shift == dc else K - sp.block_diag([sp.csc_matrix((nW, nW)), shift * sp.eye(m)], format="csc")
        try:
            lu = spla.splu(Kf, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options=dict(SymmetricMode=True))
            if np.array_equal(lu.perm_r, lu.perm_c):
                d = lu.U.diagonal()
                if np.all(np.isfinite(d)):
                    return lu, bool(np.count_nonzero(d > 0) == nW and np.count_nonzero(d < 0) == m)
        except RuntimeError:
            pass
        return spla.splu(K, permc_spec="COLAMD", diag_pivot_thresh=0.1), None

    def _next_reg(self, cur):
        if cur == 0.0:
            return 1e-4 if self.last_dw == 0.0 else max(1e-20, self.last_dw / 3.0)
        return cur * (100.0 if self.last_dw == 0.0 else 8.0)

    # -- step length helpers --

    def _frac_primal(self, w, dW, tau):
        sl, su = self._slacks(w)
        a = 1.0
        m = self.hasL & (dW < 0)
        if np.any(m):
            a = min(a, np.min(-tau * sl[m] / dW[m]))
        m = self.hasU & (dW > 0)
        if np.any(m):
            a = min(a, np.min(tau * su[m] / dW[m]))
        return a

    @staticmethod
    def _frac_dual(z, dz, mask, tau):
        m = mask & (dz < 0)
        if not np.any(m):
            return 1.0
        return min(1.0, np.min(-tau * z[m] / dz[m]))

    # -- optimality measures --

    def _measures(self, w, lam, zL, zU, mu, Jh=None, h=None):
        if Jh is None:
            Jh = self._Jh(w)
        if h is None:
            h = self._h(w)
        sl, su = self._slacks(w)
        grad_lag = self._grad_f(w) + (Jh.T @ lam if self.m else 0.0) - zL + zU
        dual = np.max(np.abs(grad_lag), initial=0.0)
        primal = np.max(np.abs(h), initial=0.0)
        cl = np.where(self.hasL, sl * zL - mu, 0.0)
        cu = np.where(self.hasU, su * zU - mu, 0.0)
        compl = max(np.max(np.abs(cl), initial=0.0), np.max(np.abs(cu), initial=0.0))
        nz = self.hasL.sum() + self.hasU.sum()
        zsum = np.sum(np.abs(zL)) + np.sum(np.abs(zU))
        sd = max(self.s_max, (np.sum(np.abs(lam)) + zsum) / max(1, self.m + nz)) / self.s_max
        sc = max(self.s_max, zsum / max(1, nz)) / self.s_max
        return max(dual / sd, primal, compl / sc), dual, primal, compl

    def _unscaled_viol(self, x):
        p = self.prob
        viol = 0.0
        if self.m:
            c = self.ev.c(x) / self.row_scale
            viol = max(
                np.max(np.maximum(p.c_lower - c, 0.0), initial=0.0),
                np.max(np.maximum(c - p.c_upper, 0.0), initial=0.0),
            )
        vb = max(
            np.max(np.maximum(p.x_lower - x, 0.0), initial=0.0),
            np.max(np.maximum(x - p.x_upper, 0.0), initial=0.0),
        )
        return max(viol, vb)

    def _worst_row(self, x):
        p = self.prob
        if not self.m:
            return ""
        c = self.ev.c(x) / self.row_scale
        v = np.maximum(p.c_lower - c, 0.0) + np.maximum(c - p.c_upper, 0.0)
        i = int(np.argmax(v))
        return f"{p.row_label(i)} ({v[i]:.3e})"

    def _rank(self, viol, E0):
        # acceptable iterates first, ordered by KKT error; then by violation
        o = self.opts
        if viol <= o.acceptable_constr_viol_tol and E0 <= o.acceptable_tol:
            return (0, E0, viol)
        return (1, viol, E0)

    # -- filter --

    def _acceptable_to_filter(self, theta, phi):
        for ft, fp in self.filter:
            if theta >= ft and phi >= fp:
                return False
        return True

    def _augment_filter(self, theta, phi):
        self.filter.append(((1.0 - self.gamma_theta) * theta, phi - self.gamma_phi * theta))

    # -- main loop --

    def run(self, x0) -> SolveResult:
        t_start = time.perf_counter()
        p, o = self.prob, self.opts
        self._bounds()
        x = self._push(np.clip(x0, p.x_lower, p.x_upper), p.x_lower, p.x_upper)
        try:
            self._set_scaling(x)
            x = self._push(x, self.lw[: self.n], self.uw[: self.n])
            c0 = self.ev.c(x)
        except EvaluationError as exc:
            return self._fail(x0, "error", f"evaluation failed at the starting point: {exc}", t_start, 0)
        s = c0[self.ineq_rows] if self.nI else np.zeros(0)
        s = self._push(s, self.lw[self.n :], self.uw[self.n :])
        w = np.concatenate([x, s])
        mu = o.mu_init
        # the barrier is driven below tol/10 so that weakly determined
        # variables (e.g. switch times) settle before termination
        mu_floor = min(o.tol / 10.0, o.mu_min)
        has_barrier = bool(self.hasL.any() or self.hasU.any())
        sub_tol = max(self.kappa_eps * mu_floor, 0.1 * o.tol)
        zL = np.where(self.hasL, 1.0, 0.0)
        zU = np.where(self.hasU, 1.0, 0.0)
        try:
            lam = self._ls_multipliers(w, zL, zU)
        except EvaluationError as exc:
            return self._fail(x, "error", str(exc), t_start, 0)
        tau = max(self.tau_min, 1.0 - mu)
        h = self._h(w)
        theta0 = np.sum(np.abs(h))
        self.theta_max = 1e4 * max(1.0, theta0)
        self.theta_min = 1e-4 * max(1.0, theta0)
        self.filter = []
        self.filter_resets = 0
        n_accept = 0
        self.reg = 0.0
        status, msg = "max-iter", "iteration limit reached"
        best = None
        self.log(f"{'iter':>5} {'objective':>15} {'inf_pr':>9} {'inf_du':>9} {'lg(mu)':>7} {'alpha':>9} {'reg':>8}")
        it = 0
        alpha_pr = 0.0
        while True:
            try:
                Jh = self._Jh(w)
                h = self._h(w)
                E0, dual, primal, compl = self._measures(w, lam, zL, zU, 0.0, Jh, h)
            except EvaluationError as exc:
                status, msg = "error", f"evaluation failed: {exc}"
                break
            x = w[: self.n]
            viol = self._unscaled_viol(x)
            fval = self.ev.f(x) / self.obj_scale
            self.history.append((it, fval, primal, dual, mu))
            line = (f"{it:5d} {fval:15.8e} {primal:9.2e} {dual:9.2e} {math.log10(mu):7.2f} "
                    f"{alpha_pr:9.2e} {self.reg:8.1e}")
            if o.print_level > 1:
                line += f"  E0={E0:.2e} viol={viol:.2e} compl={compl:.2e}"
            self.log(line)
            key = self._rank(viol, E0)
            if best is None or key < best[1]:
                best = (w.copy(), key, lam.copy(), zL.copy(), zU.copy())
            if (
                E0 <= o.tol
                and (not has_barrier or (mu <= mu_floor and self._measures(w, lam, zL, zU, mu, Jh, h)[0] <= sub_tol))
                and viol <= o.constr_viol_tol
                and dual / self.obj_scale <= o.dual_inf_tol
                and compl / self.obj_scale <= o.compl_inf_tol
            ):
                status, msg = "optimal", "converged"
                break
            if E0 <= o.acceptable_tol and viol <= o.acceptable_constr_viol_tol:
                n_accept += 1
                if n_accept >= o.acceptable_iter:
                    status, msg = "acceptable", "converged to acceptable level"
                    break
            else:
                n_accept = 0
            if it >= o.max_iter:
                break
            if o.time_limit is not None and time.perf_counter() - t_start > o.time_limit:
                msg = "time limit reached"
                break
            # barrier update
            while True:
                Emu = self._measures(w, lam, zL, zU, mu, Jh, h)[0]
                if Emu > self.kappa_eps * mu or mu <= mu_floor:
                    break
                mu = max(mu_floor, min(self.kappa_mu * mu, mu**self.theta_mu))
                tau = max(self.tau_min, 1.0 - mu)
                self.filter = []
            try:
                w, lam, zL, zU, alpha_pr = self._iterate(w, lam, zL, zU, mu, tau, Jh, h)
            except _Restart as exc:
                status, msg = "error", str(exc)
                break
            except _Infeasible as exc:
                status, msg = "infeasible", str(exc)
                break
            except EvaluationError as exc:
                status, msg = "error", f"evaluation failed: {exc}"
                break
            it += 1
        if status not in ("optimal", "acceptable") and best is not None:
            w, key, lam, zL, zU = best
            if key[0] == 0:
                msg += "; returning the best acceptable iterate"
                status = "acceptable"
        # the relaxed variable bounds may be overstepped by a hair
        w = w.copy()
        w[: self.n] = np.clip(w[: self.n], p.x_lower, p.x_upper)
        x = w[: self.n]
        try:
            E0 = self._measures(w, lam, zL, zU, 0.0)[0]
            viol = self._unscaled_viol(x)
            fval = self.ev.f(x) / self.obj_scale
        except EvaluationError:
            E0, viol, fval = np.inf, np.inf, np.nan
        if status == "error" and self.m:
            try:
                msg += f"; worst row {self._worst_row(x)}"
            except EvaluationError:
                pass
        self.log(f"status: {status} ({msg})")
        lam_out = self.row_scale * lam / self.obj_scale if self.m else np.zeros(0)
        return SolveResult(
            x=x.copy(),
            status=status,
            objective=fval,
            kkt_error=float(E0),
            constr_viol=float(viol),
            iterations=it,
            wall_time=time.perf_counter() - t_start,
            multipliers=lam_out,
            z_lower=zL[: self.n] / self.obj_scale,
            z_upper=zU[: self.n] / self.obj_scale,
            message=msg,
            history=self.history,
        )

    def _fail(self, x, status, msg, t_start, it):
        self.log(f"status: {status} ({msg})")
        return SolveResult(np.asarray(x, float).copy(), status, np.nan, np.inf, np.inf, it,
                           time.perf_counter() - t_start, message=msg, history=self.history)

    def _iterate(self, w, lam, zL, zU, mu, tau, Jh, h):
        n = self.n
        sl, su = self._slacks(w)
        Sigma = np.where(self.hasL, zL / sl, 0.0) + np.where(self.hasU, zU / su, 0.0)
        Hx = self.ev.H(w[:n], 1.0, lam) if self.m else self.ev.H(w[:n], 1.0, np.zeros(0))
        W = sp.block_diag([Hx, sp.csr_matrix((self.nI, self.nI))], format="csr") if self.nI else Hx
        gphi = self._grad_phi(w, mu)
        rhs_w = -(gphi + (Jh.T @ lam if self.m else 0.0))
        dW, dlam, resolve = self._factor_solve(W, Sigma, Jh, rhs_w, -h, mu)
        dzL = np.where(self.hasL, mu / sl - zL - zL / sl * dW, 0.0)
        dzU = np.where(self.hasU, mu / su - zU + zU / su * dW, 0.0)
        a_max = self._frac_primal(w, dW, tau)
        a_z = min(self._frac_dual(zL, dzL, self.hasL, tau), self._frac_dual(zU, dzU, self.hasU, tau))
        theta = np.sum(np.abs(h))
        phi = self._phi(w, mu)
        gd = gphi @ dW
        alpha = a_max
        if gd < 0:
            a_min = min(self.gamma_theta, self.gamma_phi * theta / -gd,
                        self.delta * theta**self.s_theta / (-gd) ** self.s_phi)
        else:
            a_min = self.gamma_theta
        a_min *= 0.05
        first = True
        self._filter_blocked = False
        blocked_at = None
        while True:
            was_blocked = self._filter_blocked
            accepted, wt, ftype = self._try(w, dW, alpha, theta, phi, gd, mu)
            if self._filter_blocked and not was_blocked:
                blocked_at = alpha
            if not accepted and first and self.opts.second_order_correction and self.m:
                res = self._soc(w, dW, alpha, theta, phi, gd, mu, tau, h, lam, gphi, resolve)
                if res is not None:
                    wt, ftype = res
                    accepted = True
            first = False
            if accepted:
                break
            alpha *= 0.5
            if alpha < a_min and blocked_at is not None and self.filter_resets < self.max_filter_resets:
                # the filter alone blocks a step with sufficient decrease:
                # forget the filter instead of entering restoration
                self.filter = []
                self.filter_resets += 1
                alpha = blocked_at
                wt = w + alpha * dW
                ftype = False
                break
            if alpha < a_min:
                wt = self._restoration(w, mu, theta, phi)
                self._augment_filter(theta, phi)
                sl, su = self._slacks(wt)
                zLn = np.where(self.hasL, np.minimum(mu / sl, 1e3), 0.0)
                zUn = np.where(self.hasU, np.minimum(mu / su, 1e3), 0.0)
                lam_n = self._ls_multipliers(wt, zLn, zUn)
                return wt, lam_n, zLn, zUn, 0.0
        if not ftype:
            self._augment_filter(theta, phi)
        lam_n = lam + alpha * dlam
        zLn = zL + a_z * dzL
        zUn = zU + a_z * dzU
        # keep bound multipliers near the primal-dual centre
        sl, su = self._slacks(wt)
        k = self.kappa_sigma
        zLn = np.where(self.hasL, np.clip(zLn, mu / (k * sl), k * mu / sl), 0.0)
        zUn = np.where(self.hasU, np.clip(zUn, mu / (k * su), k * mu / su), 0.0)
        return wt, lam_n, zLn, zUn, alpha

    def _check_trial(self, wt, theta, phi, gd, alpha, mu):
        try:
            th = np.sum(np.abs(self._h(wt)))
            ph = self._phi(wt, mu)
        except EvaluationError:
            return False, False
        if not np.isfinite(th) or not np.isfinite(ph):
            return False, False
        if th > self.theta_max:
            return False, False
        switching = gd < 0 and alpha * (-gd) ** self.s_phi > self.delta * theta**self.s_theta
        if switching and theta <= self.theta_min:
            ok, ftype = ph <= phi + self.eta_phi * alpha * gd, True
        else:
            ok, ftype = th <= (1.0 - self.gamma_theta) * theta or ph <= phi - self.gamma_phi * theta, False
        if ok and not self._acceptable_to_filter(th, ph):
            self._filter_blocked = True
            return False, False
        return ok, ftype

    def _try(self, w, dW, alpha, theta, phi, gd, mu):
        wt = w + alpha * dW
        ok, ftype = self._check_trial(wt, theta, phi, gd, alpha, mu)
        return ok, wt, ftype

    def _soc(self, w, dW, alpha, theta, phi, gd, mu, tau, h, lam, gphi, resolve):
        wt = w + alpha * dW
        try:
            h_t = self._h(wt)
        except EvaluationError:
            return None
        th_old = np.sum(np.abs(h_t))
        if th_old < theta:
            return None
        c_soc = alpha * h
        rhs_w = -(gphi + self._Jh(w).T @ lam)
        for _ in range(self.opts.max_soc):
            c_soc = c_soc + h_t
            d, _ = resolve(rhs_w, -c_soc)
            a_soc = self._frac_primal(w, d, tau)
            wt = w + a_soc * d
            ok, ftype = self._check_trial(wt, theta, phi, gd, alpha, mu)
            if ok:
                return wt, ftype
            try:
                h_t = self._h(wt)
            except EvaluationError:
                return None
            th = np.sum(np.abs(h_t))
            if th > self.kappa_soc * th_old:
                return None
            th_old = th
        return None

    def _restoration(self, w, mu, theta0, phi0):
        """Reduce infeasibility by regularized Gauss-Newton steps until the
        iterate is acceptable to the filter."""
        wR = w.copy()
        zeta = math.sqrt(mu)
        muR = max(mu, np.max(np.abs(self._h(w)), initial=0.0))
        muR = min(muR, 1e-1)
        tau = max(self.tau_min, 1.0 - muR)
        for k in range(self.opts.max_restoration_iter):
            h = self._h(w)
            theta = np.sum(np.abs(h))
            if k > 0:
                ph = self._phi(w, mu)
                if theta <= 0.9 * theta0 and self._acceptable_to_filter(theta, ph) and (
                    theta <= self.theta_max
                ):
                    return w
            Jh = self._Jh(w)
            sl, su = self._slacks(w)
            gB = -np.where(self.hasL, muR / sl, 0.0) + np.where(self.hasU, muR / su, 0.0)
            Sig = np.where(self.hasL, muR / sl**2, 0.0) + np.where(self.hasU, muR / su**2, 0.0)
            grad = Jh.T @ h + zeta * (w - wR) + gB
            if np.max(np.abs(Jh.T @ h), initial=0.0) <= 1e-9 * max(1.0, theta) and theta > self.opts.constr_viol_tol:
                raise _Infeasible(f"converged to a point of local infeasibility (theta={theta:.3e})")
            K = sp.bmat([[sp.diags(zeta + Sig), Jh.T], [Jh, -sp.eye(self.m)]], format="csc")
            rhs = np.concatenate([-(zeta * (w - wR) + gB), -h])
            try:
                sol = spla.splu(K).solve(rhs)
            except RuntimeError:
                raise _Restart("restoration system is singular")
            d = sol[: self.nW]
            a = self._frac_primal(w, d, tau)

            def merit(v):
                hv = self._h(v)
                sl_, su_ = self._slacks(v)
                if np.any(sl_[self.hasL] <= 0) or np.any(su_[self.hasU] <= 0):
                    return np.inf
                return (0.5 * hv @ hv + 0.5 * zeta * np.sum((v - wR) ** 2)
                        - muR * (np.sum(np.log(sl_[self.hasL])) + np.sum(np.log(su_[self.hasU]))))

            m0 = merit(w)
            slope = grad @ d
            while a > 1e-12:
                try:
                    mt = merit(w + a * d)
                except EvaluationError:
                    mt = np.inf
                if mt <= m0 + 1e-4 * a * min(slope, 0.0):
                    break
                a *= 0.5
            if a <= 1e-12:
                raise _Infeasible("restoration phase failed to make progress")
            w = w + a * d
            if muR > 1e-9 and a > 0.5:
                muR *= 0.2
                tau = max(self.tau_min, 1.0 - muR)
            wR = w.copy() if a == 1.0 else wR
        raise _Infeasible("restoration iteration limit reached")


class _Infeasible(Exception):
    pass


def kkt_report(problem: NlpProblem, x, multipliers=None, z_lower=None, z_upper=None, top: int = 5) -> dict:
    """First-order optimality diagnostics for ``problem`` at ``x``.

    Multipliers follow the convention grad f + J^T lam - z_lower + z_upper = 0.
    Missing bound multipliers are estimated from the sign of the residual at
    active bounds.
    """
    x = np.asarray(x, float)
    n, m = problem.n, problem.m
    lam = np.zeros(m) if multipliers is None else np.asarray(multipliers, float)
    if x.size != n or lam.size != m:
        raise ValueError("dimension mismatch")
    g = np.asarray(problem.gradient(x), float)
    r = g.copy()
    if m:
        J = sp.csr_matrix(problem.jacobian(x))
        r = r + J.T @ lam
        c = np.asarray(problem.constraints(x), float)
    else:
        c = np.zeros(0)
    if z_lower is None and z_upper is None:
        atL = np.isfinite(problem.x_lower) & (x - problem.x_lower <= 1e-8 * np.maximum(1.0, np.abs(x)))
        atU = np.isfinite(problem.x_upper) & (problem.x_upper - x <= 1e-8 * np.maximum(1.0, np.abs(x)))
        zl = np.where(atL, np.maximum(r, 0.0), 0.0)
        zu = np.where(atU, np.maximum(-r, 0.0), 0.0)
    else:
        zl = np.zeros(n) if z_lower is None else np.asarray(z_lower, float)
        zu = np.zeros(n) if z_upper is None else np.asarray(z_upper, float)
    stat = r - zl + zu
    row_viol = np.maximum(problem.c_lower - c, 0.0) + np.maximum(c - problem.c_upper, 0.0)
    var_viol = np.maximum(problem.x_lower - x, 0.0) + np.maximum(x - problem.x_upper, 0.0)
    # multiplier sign feasibility: lam <= 0 at active lower rows, >= 0 at upper
    dual_inf = 0.0
    if m:
        lo_only = np.isfinite(problem.c_lower) & ~np.isfinite(problem.c_upper)
        up_only = np.isfinite(problem.c_upper) & ~np.isfinite(problem.c_lower)
        dual_inf = max(
            np.max(np.maximum(lam[lo_only], 0.0), initial=0.0),
            np.max(np.maximum(-lam[up_only], 0.0), initial=0.0),
        )
    dual_inf = max(dual_inf, np.max(np.maximum(-zl, 0.0), initial=0.0), np.max(np.maximum(-zu, 0.0), initial=0.0))
    gap_l = np.where(np.isfinite(problem.x_lower), x - problem.x_lower, 0.0)
    gap_u = np.where(np.isfinite(problem.x_upper), problem.x_upper - x, 0.0)
    compl = max(np.max(np.abs(gap_l * zl), initial=0.0), np.max(np.abs(gap_u * zu), initial=0.0))
    if m:
        slack_lo = np.where(np.isfinite(problem.c_lower), c - problem.c_lower, 0.0)
        slack_hi = np.where(np.isfinite(problem.c_upper), problem.c_upper - c, 0.0)
        eqr = problem.c_lower == problem.c_upper
        cr = np.where(eqr, 0.0, np.where(lam < 0, np.abs(lam * slack_lo), np.abs(lam * slack_hi)))
        compl = max(compl, np.max(cr, initial=0.0))
    order = np.argsort(-row_viol)[: min(top, m)]
    worst_rows = [(problem.row_label(int(i)), float(row_viol[i])) for i in order if row_viol[i] > 0]
    order_s = np.argsort(-np.abs(stat))[: min(top, n)]
    worst_stat = [(problem.var_label(int(j)), float(stat[j])) for j in order_s if stat[j] != 0]
    return {
        "stationarity": float(np.max(np.abs(stat), initial=0.0)),
        "primal_infeasibility": float(max(np.max(row_viol, initial=0.0), np.max(var_viol, initial=0.0))),
        "dual_infeasibility": float(dual_inf),
        "complementarity": float(compl),
        "worst_rows": worst_rows,
        "worst_stationarity": worst_stat,
    }
