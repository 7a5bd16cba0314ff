"""Multiple-domain LGR transcription of an optimal control problem.

The decision vector (see :class:`~spoc.mesh.DecisionLayout`) is scaled
before it reaches the NLP solver: every variable with finite bounds is
mapped to roughly [-1/2, 1/2].  Constraint rows are built from groups of
pointwise functions whose local Jacobians and Hessians come from forward
mode AD and are scattered into global sparse matrices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .errors import AssemblyError, EvaluationError
from .lgr import lgr_grid
from .mesh import DecisionLayout, MeshStructure
from .model import OcpDefinition, Segment, Trajectory
from .nlp import NlpProblem


@dataclass
class _Points:
    """Per-collocation-point data (plus optional extra points)."""

    row: np.ndarray  # state row
    urow: np.ndarray  # control row, -1 where none
    domain: np.ndarray
    tau: np.ndarray  # domain coordinate
    half: np.ndarray  # half-width of the owning interval in domain coordinates
    weight: np.ndarray  # LGR weight times ``half``


class _Group:
    """Pointwise function whose outputs feed constraint rows or the objective.

    ``colmap[k, p]`` is the decision-variable index of local input ``k`` at
    point ``p`` (-1 when the input is a constant stored in ``const``).
    """

    def __init__(self, name, fn, colmap, const, rows=None, out_scale=None, labels=None):
        self.name = name
        self.fn = fn
        self.colmap = np.asarray(colmap, dtype=int)
        self.const = np.asarray(const, dtype=float)
        self.rows = None if rows is None else np.asarray(rows, dtype=int)
        self.n_points = self.colmap.shape[1]
        self.active = np.flatnonzero((self.colmap >= 0).any(axis=1))
        if rows is not None:
            self.out_scale = np.ones(self.rows.shape) if out_scale is None else np.asarray(out_scale, float)
        self.labels = labels

    @property
    def objective(self) -> bool:
        return self.rows is None

    def inputs(self, xphys):
        safe = np.where(self.colmap >= 0, self.colmap, 0)
        return np.where(self.colmap >= 0, xphys[safe], self.const)

    def _wrap(self, z):
        act = self.active

        def local(zs):
            full = list(z)
            for j, k in enumerate(act):
                full[k] = zs[j]
            return self.fn(full)

        return local, [z[k] for k in act]

    def values(self, xphys):
        z = list(self.inputs(xphys))
        out = ad._as_list(self.fn(z))
        return np.array([np.broadcast_to(np.asarray(o, float), (self.n_points,)) for o in out])

    def jacobian(self, xphys):
        local, zs = self._wrap(list(self.inputs(xphys)))
        vals, jac = ad.point_jacobian(local, zs, (self.n_points,))
        return vals, jac

    def hessian(self, xphys, weights):
        """Hessian of sum_i sum_p weights[i, p] * out_i(p)."""
        local, zs = self._wrap(list(self.inputs(xphys)))

        def scalar(zz):
            out = ad._as_list(local(zz))
            total = 0.0
            for i, o in enumerate(out):
                total = total + o * weights[i]
            return total

        _, _, hess = ad.point_hessian(scalar, zs, (self.n_points,))
        return hess


class Transcription:
    """NLP built from an OCP on a fixed multiple-domain mesh."""

    def __init__(self, ocp: OcpDefinition, mesh: MeshStructure, delta_min: Optional[float] = None):
        mesh.validate()
        self.ocp = ocp
        self.mesh = mesh
        self.layout = DecisionLayout.from_mesh(mesh, ocp.n_y, ocp.n_u)
        horizon = ocp.tf.upper - ocp.t0.lower
        self.delta_min = 1e-4 * horizon if delta_min is None else delta_min
        self._build_points()
        self._build_scaling()
        self.groups: list = []
        self._lin = []  # (row, col, coef) in physical units
        self._lin_const: dict = {}
        self.c_lower: list = []
        self.c_upper: list = []
        self.row_labels: list = []
        self.m = 0
        self._build_defects()
        self._build_objective()
        self._build_boundary()
        self._build_path()
        self._build_svics()
        self._build_ordering()
        self._finalize()

    # -- mesh bookkeeping -------------------------------------------------

    def _build_points(self):
        rows, dom, tau, half, wts = [], [], [], [], []
        self.blocks = []  # (first state row, N) per interval
        p = 0
        for d, spec in enumerate(self.mesh.domains):
            fr = spec.fractions
            for k, n in enumerate(spec.counts):
                g = lgr_grid(int(n))
                h = 0.5 * (fr[k + 1] - fr[k])
                tau.append(fr[k] + (g.colloc_nodes + 1.0) * h)
                half.append(np.full(n, h))
                wts.append(g.weights * h)
                dom.append(np.full(n, d))
                rows.append(np.arange(p, p + n))
                self.blocks.append((p, int(n), h, d))
                p += n
        rows = np.concatenate(rows)
        self.pts = _Points(
            row=rows,
            urow=rows.copy(),
            domain=np.concatenate(dom),
            tau=np.concatenate(tau),
            half=np.concatenate(half),
            weight=np.concatenate(wts),
        )
        self.n_colloc = p

    def _time_col(self, j):
        idx = self.layout.time_index[j]
        return -1 if idx is None else idx

    def _time_const(self, j):
        f = self.layout.time_fixed[j]
        return 0.0 if f is None else f

    def _build_scaling(self):
        L = self.layout
        ocp = self.ocp
        s = np.ones(L.n_vars)
        o = np.zeros(L.n_vars)
        lo = np.full(L.n_vars, -np.inf)
        hi = np.full(L.n_vars, np.inf)

        def affine(lo_, hi_):
            if np.isfinite(lo_) and np.isfinite(hi_) and hi_ > lo_:
                return hi_ - lo_, 0.5 * (lo_ + hi_)
            return 1.0, 0.0

        rows = np.arange(L.n_state_rows)
        for i in range(L.n_y):
            idx = L.y_index(rows, i)
            if ocp.state_scale is not None:
                s[idx], o[idx] = float(ocp.state_scale[i]), 0.0
            else:
                s[idx], o[idx] = affine(ocp.y_lower[i], ocp.y_upper[i])
            lo[idx], hi[idx] = ocp.y_lower[i], ocp.y_upper[i]
        urows = np.arange(L.n_colloc)
        for i in range(L.n_u):
            idx = L.u_index(urows, i)
            s[idx], o[idx] = affine(ocp.u_lower[i], ocp.u_upper[i])
            lo[idx], hi[idx] = ocp.u_lower[i], ocp.u_upper[i]
        D = self.mesh.n_domains
        for j, idx in enumerate(L.time_index):
            if idx is None:
                continue
            if j == 0:
                a, b = ocp.t0.lower, ocp.t0.upper
            elif j == D:
                a, b = ocp.tf.lower, ocp.tf.upper
            else:
                a, b = self.mesh.domains[j - 1].window
            lo[idx], hi[idx] = a, b
            width = max(b - a, 1e-3 * (ocp.tf.upper - ocp.t0.lower))
            s[idx], o[idx] = width, 0.5 * (a + b)
        self.var_scale, self.var_shift = s, o
        self.x_lower_phys, self.x_upper_phys = lo, hi

    def to_phys(self, x):
        return self.var_scale * np.asarray(x, float) + self.var_shift

    def to_scaled(self, xphys):
        return (np.asarray(xphys, float) - self.var_shift) / self.var_scale

    # -- row bookkeeping --------------------------------------------------

    def _alloc(self, n, lower, upper, labels):
        rows = np.arange(self.m, self.m + n)
        self.m += n
        self.c_lower.extend(np.broadcast_to(lower, (n,)).tolist())
        self.c_upper.extend(np.broadcast_to(upper, (n,)).tolist())
        self.row_labels.extend(labels)
        return rows

    def _std_colmap(self, pts_idx, t_row_override=None, with_u=True):
        """Inputs (y, u, t_left, t_right) at the given collocation points."""
        L = self.layout
        P = len(pts_idx)
        ny, nu = L.n_y, L.n_u
        cm = np.full((ny + nu + 2, P), -1, dtype=int)
        const = np.zeros((ny + nu + 2, P))
        srow = self.pts.row[pts_idx] if t_row_override is None else t_row_override
        for i in range(ny):
            cm[i] = L.y_index(srow, i)
        if with_u:
            urow = self.pts.urow[pts_idx]
            for i in range(nu):
                cm[ny + i] = L.u_index(urow, i)
        dom = self.pts.domain[pts_idx] if t_row_override is None else np.full(P, self.mesh.n_domains - 1)
        for side, shift in ((ny + nu, 0), (ny + nu + 1, 1)):
            cm[side] = [self._time_col(d + shift) for d in dom]
            const[side] = [self._time_const(d + shift) for d in dom]
        return cm, const

    def _split_std(self, z, a, b):
        ny, nu = self.layout.n_y, self.layout.n_u
        y = z[:ny]
        u = z[ny : ny + nu]
        tl, tr = z[ny + nu], z[ny + nu + 1]
        t = tl * a + tr * b
        return y, u, tl, tr, t

    # -- constraint families ---------------------------------------------

    def _build_defects(self):
        ocp, L = self.ocp, self.layout
        ny = L.n_y
        P = self.n_colloc
        idx = np.arange(P)
        labels = [f"defect[p={p},{ocp.state_names[i]}]" for p in range(P) for i in range(ny)]
        rows = self._alloc(P * ny, 0.0, 0.0, labels).reshape(P, ny).T
        ys = self.var_scale[L.y_index(0, np.arange(ny))]
        for first, n, _, _ in self.blocks:
            Dm = lgr_grid(n).diff_matrix
            for i in range(n):
                for j in range(n + 1):
                    for c in range(ny):
                        self._lin.append((rows[c, first + i], L.y_index(first + j, c), Dm[i, j] / ys[c]))
        a = 0.5 * (1.0 - self.pts.tau)
        b = 0.5 * (1.0 + self.pts.tau)
        half = self.pts.half
        dyn = ocp.dynamics

        def fn(z):
            y, u, tl, tr, t = self._split_std(z, a, b)
            f = ad._as_list(dyn(y, u, t))
            scale = (tr - tl) * (-0.5) * half
            return [scale * fi for fi in f]

        cm, const = self._std_colmap(idx)
        out_scale = np.repeat((1.0 / ys)[:, None], P, axis=1)
        self.groups.append(_Group("defect", fn, cm, const, rows, out_scale))

    def _build_objective(self):
        ocp, L = self.ocp, self.layout
        if ocp.running_cost is not None:
            idx = np.arange(self.n_colloc)
            a = 0.5 * (1.0 - self.pts.tau)
            b = 0.5 * (1.0 + self.pts.tau)
            w = self.pts.weight
            lag = ocp.running_cost

            def run(z):
                y, u, tl, tr, t = self._split_std(z, a, b)
                return [0.5 * (tr - tl) * w * lag(y, u, t)]

            cm, const = self._std_colmap(idx)
            self.groups.append(_Group("running_cost", run, cm, const))
        if ocp.endpoint_cost is not None:
            cm, const = self._endpoint_colmap()
            M = ocp.endpoint_cost
            ny = L.n_y

            def endp(z):
                return [M(z[:ny], z[ny], z[ny + 1 : 2 * ny + 1], z[2 * ny + 1])]

            self.groups.append(_Group("endpoint_cost", endp, cm, const))

    def _endpoint_colmap(self):
        L = self.layout
        ny = L.n_y
        D = self.mesh.n_domains
        cm = np.full((2 * ny + 2, 1), -1, dtype=int)
        const = np.zeros((2 * ny + 2, 1))
        cm[:ny, 0] = L.y_index(0, np.arange(ny))
        cm[ny, 0] = self._time_col(0)
        const[ny, 0] = self._time_const(0)
        cm[ny + 1 : 2 * ny + 1, 0] = L.y_index(self.n_colloc, np.arange(ny))
        cm[2 * ny + 1, 0] = self._time_col(D)
        const[2 * ny + 1, 0] = self._time_const(D)
        return cm, const

    def _build_boundary(self):
        ocp, L = self.ocp, self.layout
        for which, values, srow in (("y0", ocp.initial_state, 0), ("yf", ocp.final_state, self.n_colloc)):
            for i, v in enumerate(values):
                if v is None:
                    continue
                col = L.y_index(srow, i)
                r = self._alloc(1, v, v, [f"boundary[{which},{ocp.state_names[i]}]"])[0]
                self._lin.append((r, col, 1.0))
        if ocp.boundary_fn is not None:
            lo, hi = ocp.boundary_bounds
            n = len(lo)
            rows = self._alloc(n, lo, hi, [f"boundary[b{i}]" for i in range(n)])
            cm, const = self._endpoint_colmap()
            bfn = ocp.boundary_fn
            ny = L.n_y

            def bnd(z):
                return ad._as_list(bfn(z[:ny], z[ny], z[ny + 1 : 2 * ny + 1], z[2 * ny + 1]))

            self.groups.append(_Group("boundary", bnd, cm, const, rows[:, None]))

    def _build_path(self):
        if not self.ocp.path:
            return
        P = self.n_colloc
        idx = np.arange(P)
        a = 0.5 * (1.0 - self.pts.tau)
        b = 0.5 * (1.0 + self.pts.tau)
        cm, const = self._std_colmap(idx)
        for pc in self.ocp.path:
            n = pc.size
            lo = np.repeat(np.asarray(pc.lower, float)[None, :], P, axis=0).ravel()
            hi = np.repeat(np.asarray(pc.upper, float)[None, :], P, axis=0).ravel()
            labels = [f"path[{pc.name}{i},p={p}]" for p in range(P) for i in range(n)]
            rows = self._alloc(P * n, lo, hi, labels).reshape(P, n).T

            def fn(z, _f=pc.fn):
                y, u, _, _, t = self._split_std(z, a, b)
                return ad._as_list(_f(y, u, t))

            self.groups.append(_Group(f"path:{pc.name}", fn, cm, const, rows))

    def _build_svics(self):
        ocp = self.ocp
        doms = self.mesh.domains
        D = len(doms)
        for j, svic in enumerate(ocp.svics):
            canon = svic.canonical()
            free = [d for d in range(D) if not (doms[d].constrained and doms[d].svic == j)]
            idx = np.flatnonzero(np.isin(self.pts.domain, free))
            if idx.size:
                a = 0.5 * (1.0 - self.pts.tau[idx])
                b = 0.5 * (1.0 + self.pts.tau[idx])
                cm, const = self._std_colmap(idx)
                labels = [f"svic[{svic.name},p={p}]" for p in idx]
                rows = self._alloc(idx.size, -np.inf, 0.0, labels)[None, :]

                def fn(z, _a=a, _b=b):
                    y, u, _, _, t = self._split_std(z, _a, _b)
                    return [canon(y, u, t)]

                self.groups.append(_Group(f"svic:{svic.name}", fn, cm, const, rows))
            if (D - 1) in free:
                # final non-collocated support point
                cm, const = self._std_colmap(np.array([0]), t_row_override=np.array([self.n_colloc]), with_u=False)
                rows = self._alloc(1, -np.inf, 0.0, [f"svic[{svic.name},tf]"])[None, :]

                def fn_end(z):
                    y, u, _, tr, _ = self._split_std(z, 0.0, 1.0)
                    return [canon(y, u, tr)]

                self.groups.append(_Group(f"svic_end:{svic.name}", fn_end, cm, const, rows))
        for d, spec in enumerate(doms):
            if not spec.constrained:
                continue
            stack = spec.stack
            q = stack.order
            name = ocp.svics[spec.svic].name
            idx = np.flatnonzero(self.pts.domain == d)
            first = idx[:1]
            cm, const = self._std_colmap(first)
            rows = self._alloc(q, 0.0, 0.0, [f"tangency[{name},d={d},k={k}]" for k in range(q)])[:, None]

            def tang(z, _stack=stack):
                y, u, tl, _, _ = self._split_std(z, 1.0, 0.0)
                return [_stack.level(k)(y, u, tl) for k in range(_stack.order)]

            self.groups.append(_Group(f"tangency:{name}:{d}", tang, cm, const, rows))
            a = 0.5 * (1.0 - self.pts.tau[idx])
            b = 0.5 * (1.0 + self.pts.tau[idx])
            cm, const = self._std_colmap(idx)
            rows = self._alloc(idx.size, 0.0, 0.0, [f"arc[{name},d={d},p={p}]" for p in idx])[None, :]

            def arc(z, _a=a, _b=b, _top=stack.highest):
                y, u, _, _, t = self._split_std(z, _a, _b)
                return [_top(y, u, t)]

            self.groups.append(_Group(f"arc:{name}:{d}", arc, cm, const, rows))

    def _build_ordering(self):
        D = self.mesh.n_domains
        for j in range(1, D + 1):
            a, b = self.layout.time_index[j - 1], self.layout.time_index[j]
            if a is None and b is None:
                continue
            const = 0.0
            r = self._alloc(1, self.delta_min, np.inf, [f"order[{j}]"])[0]
            if b is not None:
                self._lin.append((r, b, 1.0))
            else:
                const += self.layout.time_fixed[j]
            if a is not None:
                self._lin.append((r, a, -1.0))
            else:
                const -= self.layout.time_fixed[j - 1]
            self._lin_const[r] = const

    def _finalize(self):
        m, n = self.m, self.layout.n_vars
        self.c_lower = np.array(self.c_lower, float)
        self.c_upper = np.array(self.c_upper, float)
        if self._lin:
            r, c, v = (np.array(x) for x in zip(*self._lin))
            r = r.astype(int)
            c = c.astype(int)
        else:
            r = c = np.zeros(0, int)
            v = np.zeros(0)
        A = sp.csr_matrix((v, (r, c)), shape=(m, n))
        # physical -> scaled: A xphys = A (s x + o)
        self.A = (A @ sp.diags(self.var_scale)).tocsr()
        self.b = A @ self.var_shift
        for row, cst in self._lin_const.items():
            self.b[row] += cst
        pat_r, pat_c = [self.A.tocoo().row], [self.A.tocoo().col]
        for g in self.groups:
            if g.objective:
                continue
            for i in range(g.rows.shape[0]):
                for k in g.active:
                    ok = g.colmap[k] >= 0
                    pat_r.append(g.rows[i, ok])
                    pat_c.append(g.colmap[k, ok])
        self.jac_rows = np.concatenate(pat_r).astype(int)
        self.jac_cols = np.concatenate(pat_c).astype(int)
        self.x_lower = self.to_scaled(self.x_lower_phys)
        self.x_upper = self.to_scaled(self.x_upper_phys)
        self._cache = {}

    # -- evaluation -------------------------------------------------------

    def _check(self, arr, what):
        if not np.all(np.isfinite(arr)):
            raise EvaluationError(f"non-finite {what} in transcription")
        return arr

    def objective(self, x):
        xp = self.to_phys(x)
        total = 0.0
        for g in self.groups:
            if g.objective:
                total += float(np.sum(g.values(xp)))
        return self._check(np.array(total), "objective")[()]

    def gradient(self, x):
        xp = self.to_phys(x)
        grad = np.zeros(self.layout.n_vars)
        for g in self.groups:
            if not g.objective:
                continue
            _, jac = g.jacobian(xp)
            for j, k in enumerate(g.active):
                ok = g.colmap[k] >= 0
                np.add.at(grad, g.colmap[k, ok], jac[0, j, ok])
        return self._check(grad * self.var_scale, "gradient")

    def constraints(self, x):
        xp = self.to_phys(x)
        c = self.A @ np.asarray(x, float) + self.b
        for g in self.groups:
            if g.objective:
                continue
            vals = g.values(xp) * g.out_scale
            np.add.at(c, g.rows.ravel(), vals.ravel())
        return self._check(c, "constraint")

    def jacobian(self, x):
        xp = self.to_phys(x)
        A = self.A.tocoo()
        vals = [A.data]
        for g in self.groups:
            if g.objective:
                continue
            _, jac = g.jacobian(xp)
            for i in range(g.rows.shape[0]):
                for j, k in enumerate(g.active):
                    ok = g.colmap[k] >= 0
                    vals.append(jac[i, j, ok] * g.out_scale[i, ok] * self.var_scale[g.colmap[k, ok]])
        v = self._check(np.concatenate(vals), "Jacobian")
        return sp.csr_matrix((v, (self.jac_rows, self.jac_cols)), shape=(self.m, self.layout.n_vars))

    def hessian(self, x, obj_factor, lam):
        xp = self.to_phys(x)
        lam = np.asarray(lam, float)
        rr, cc, vv = [], [], []
        for g in self.groups:
            if g.objective:
                if obj_factor == 0.0:
                    continue
                w = np.full((1, g.n_points), float(obj_factor))
            else:
                w = lam[g.rows] * g.out_scale
                if not np.any(w):
                    continue
            H = g.hessian(xp, w)
            for ja, ka in enumerate(g.active):
                for jb, kb in enumerate(g.active):
                    ok = (g.colmap[ka] >= 0) & (g.colmap[kb] >= 0)
                    ca, cb = g.colmap[ka, ok], g.colmap[kb, ok]
                    rr.append(ca)
                    cc.append(cb)
                    vv.append(H[ja, jb, ok] * self.var_scale[ca] * self.var_scale[cb])
        n = self.layout.n_vars
        if not rr:
            return sp.csr_matrix((n, n))
        v = self._check(np.concatenate(vv), "Hessian")
        return sp.csr_matrix((v, (np.concatenate(rr), np.concatenate(cc))), shape=(n, n))

    def problem(self) -> NlpProblem:
        return NlpProblem(
            n=self.layout.n_vars,
            m=self.m,
            x_lower=self.x_lower,
            x_upper=self.x_upper,
            c_lower=self.c_lower,
            c_upper=self.c_upper,
            objective=self.objective,
            gradient=self.gradient,
            constraints=self.constraints,
            jacobian=self.jacobian,
            hessian=self.hessian,
            row_labels=self.row_labels,
            var_labels=self.var_labels(),
        )

    # -- conversions ------------------------------------------------------

    def var_labels(self) -> list:
        L, ocp = self.layout, self.ocp
        labels = [f"{ocp.state_names[i]}@{r}" for r in range(L.n_state_rows) for i in range(L.n_y)]
        labels += [f"{ocp.control_names[i]}@{r}" for r in range(L.n_colloc) for i in range(L.n_u)]
        D = self.mesh.n_domains
        for j, idx in enumerate(L.time_index):
            if idx is not None:
                labels.append("t0" if j == 0 else "tf" if j == D else f"ts{j}")
        return labels

    def initial_point(self, previous: Trajectory) -> np.ndarray:
        """Scaled starting vector interpolated from ``previous``, clipped to bounds."""
        xp = warm_start(previous, self.mesh, self.ocp.n_y, self.ocp.n_u)
        lo, hi = self.x_lower_phys, self.x_upper_phys
        xp = np.clip(xp, lo, hi)
        return self.to_scaled(xp)

    def extract(self, x) -> Trajectory:
        return extract_trajectory(self.to_phys(x), self.mesh, self.ocp.n_y, self.ocp.n_u)

    def dump(self, x, path):
        """Write bounds, values and labels of the NLP at ``x`` as JSON."""
        x = np.asarray(x, float)
        c = self.constraints(x)
        viol = np.maximum(self.c_lower - c, 0.0) + np.maximum(c - self.c_upper, 0.0)
        data = {
            "variables": [
                {"name": n, "value": float(v), "lower": float(a), "upper": float(b)}
                for n, v, a, b in zip(self.var_labels(), self.to_phys(x), self.x_lower_phys, self.x_upper_phys)
            ],
            "rows": [
                {"name": n, "value": float(v), "lower": float(a), "upper": float(b), "violation": float(e)}
                for n, v, a, b, e in zip(self.row_labels, c, self.c_lower, self.c_upper, viol)
            ],
            "objective": float(self.objective(x)),
        }
        with open(path, "w") as fh:
            json.dump(data, fh, indent=1, default=_jsonable)


def _jsonable(v):
    if isinstance(v, float) and not np.isfinite(v):
        return str(v)
    raise TypeError(type(v))


def assemble(ocp: OcpDefinition, mesh: MeshStructure, delta_min: Optional[float] = None) -> Transcription:
    """Build the NLP for ``ocp`` on ``mesh``."""
    try:
        return Transcription(ocp, mesh, delta_min)
    except (EvaluationError, ValueError, IndexError) as exc:
        raise AssemblyError(str(exc)) from exc


def _domain_times(mesh, T):
    out = []
    for d, spec in enumerate(mesh.domains):
        out.append(T[d] + (spec.fractions + 1.0) * 0.5 * (T[d + 1] - T[d]))
    return out


def extract_trajectory(xphys, mesh: MeshStructure, n_y: int, n_u: int) -> Trajectory:
    """Trajectory from a physical decision vector."""
    L = DecisionLayout.from_mesh(mesh, n_y, n_u)
    Y, U, T = L.unpack(xphys)
    segs = []
    p = 0
    for d, (spec, edges) in enumerate(zip(mesh.domains, _domain_times(mesh, T))):
        for k, n in enumerate(spec.counts):
            g = lgr_grid(int(n))
            t = edges[k] + (g.nodes + 1.0) * 0.5 * (edges[k + 1] - edges[k])
            segs.append(Segment(t, Y[p : p + n + 1].copy(), U[p : p + n].copy(), d))
            p += n
    return Trajectory(segs, [float(v) for v in T])


def warm_start(previous: Trajectory, mesh: MeshStructure, n_y: int, n_u: int) -> np.ndarray:
    """Physical decision vector for ``mesh`` interpolated from ``previous``.

    Free t0/tf are taken from ``previous``; interior interfaces come from the
    mesh guesses, falling back to the window midpoints.
    """
    L = DecisionLayout.from_mesh(mesh, n_y, n_u)
    D = mesh.n_domains
    T = np.empty(D + 1)
    T[0] = previous.t0 if L.time_index[0] is not None else L.time_fixed[0]
    T[D] = previous.tf if L.time_index[D] is not None else L.time_fixed[D]
    for j in range(1, D):
        spec = mesh.domains[j - 1]
        T[j] = spec.t_guess if spec.t_guess is not None else 0.5 * sum(spec.window)
    if np.any(np.diff(T) <= 0):
        raise AssemblyError(f"interface guesses are not increasing: {T}")
    times = []
    for spec, edges in zip(mesh.domains, _domain_times(mesh, T)):
        for k, n in enumerate(spec.counts):
            g = lgr_grid(int(n))
            times.append(edges[k] + (g.colloc_nodes + 1.0) * 0.5 * (edges[k + 1] - edges[k]))
    tc = np.concatenate(times)
    ts = np.append(tc, T[D])
    Y = previous.state_at(ts)
    U = previous.control_at(tc)
    return L.pack(Y, U, T)
