"""Discretization-error estimate, constraint-violation metric, and mesh refinement."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import lgr
from .autodiff import _as_list
from .mesh import MeshStructure
from .model import OcpDefinition, Trajectory
from .structure import DetectionConfig, DetectionReport, decompose, detect_all, global_intervals


@dataclass
class ErrorReport:
    """Per-interval relative state errors (one array per domain) and the
    maximum oversampled violation of each SVIC."""

    errors: list
    e_max: float
    violations: list = field(default_factory=list)

    @property
    def delta_c(self) -> float:
        return max(self.violations, default=0.0)

    def to_dict(self) -> dict:
        return {
            "errors": [e.tolist() for e in self.errors],
            "e_max": self.e_max,
            "violations": list(self.violations),
            "delta_c": self.delta_c,
        }


def _eval_rows(fn, Y, U, t):
    out = _as_list(fn([Y[:, i] for i in range(Y.shape[1])], [U[:, i] for i in range(U.shape[1])], t))
    return np.column_stack([np.broadcast_to(np.asarray(o, float), t.shape) for o in out])


def interval_error(seg, dynamics, denom) -> float:
    """Max relative difference between the state interpolant and its
    re-integration on the N+1 point LGR grid of one interval."""
    n = seg.n
    m = n + 1
    ig = lgr.integration_matrix(m)
    tau = np.append(ig.nodes, 1.0)
    t_l, t_r = seg.t[0], seg.t[-1]
    tq = lgr.map_time(tau, t_l, t_r)
    Y = seg.state_at(tq)
    U = seg.control_at(tq[:-1])
    F = _eval_rows(dynamics, Y[:-1], U, tq[:-1])
    Yhat = Y[0] + 0.5 * (t_r - t_l) * (ig.int_matrix @ F)
    err = np.abs(Yhat - Y[1:]) / denom
    return float(err.max())


def constraint_violations(traj: Trajectory, svics, oversample: int = 10) -> list:
    """Largest positive canonical residual of each SVIC on a dense grid."""
    if not svics:
        return []
    t, Y, _ = traj.dense(oversample)
    cols = [Y[:, i] for i in range(Y.shape[1])]
    out = []
    for s in svics:
        r = np.broadcast_to(np.asarray(s.residual(cols, t), float), t.shape)
        out.append(float(max(0.0, r.max())))
    return out


def estimate_error(traj: Trajectory, mesh: MeshStructure, ocp: OcpDefinition, oversample: int = 10) -> ErrorReport:
    """Relative discretization error per interval plus SVIC violations."""
    segs_by_dom: dict = {}
    for seg in traj.segments:
        segs_by_dom.setdefault(seg.domain, []).append(seg)
    errors = []
    for d, spec in enumerate(mesh.domains):
        segs = segs_by_dom.get(d, [])
        if len(segs) != spec.n_intervals:
            raise ValueError(f"trajectory does not match mesh in domain {d}")
        denom = 1.0 + np.max(np.abs(np.vstack([s.y for s in segs])), axis=0)
        errors.append(np.array([interval_error(s, ocp.dynamics, denom) for s in segs]))
    e_max = float(max(e.max() for e in errors))
    return ErrorReport(errors, e_max, constraint_violations(traj, ocp.svics, oversample))


@dataclass(frozen=True)
class RefineConfig:
    rho: float = 3.0
    n_min: int = 4
    n_max: int = lgr.MAX_NODES

    def __post_init__(self):
        if not (2 <= self.n_min <= self.n_max <= lgr.MAX_NODES):
            raise ValueError("need 2 <= n_min <= n_max <= 64")


def _refine_interval(a, b, n, e, tol, cfg: RefineConfig):
    """Return (edges, counts) replacing one interval."""
    if e <= tol:
        return [a, b], [n]
    p = max(1, math.ceil(math.log10(e / tol)))
    if math.log10(e / tol) <= cfg.rho and n + p <= cfg.n_max:
        return [a, b], [n + p]
    pieces = max(2, math.ceil(p / cfg.rho) + 1)
    n_new = max(cfg.n_min, math.ceil(n / pieces))
    return np.linspace(a, b, pieces + 1).tolist(), [n_new] * pieces


def refine_regular(mesh: MeshStructure, report: ErrorReport, tol: float,
                   cfg: Optional[RefineConfig] = None) -> MeshStructure:
    """Per-interval hp refinement of every interval failing ``tol``.

    Within ``rho`` orders of magnitude (and below the point cap) the
    polynomial degree is raised by ceil(log10(e/tol)); otherwise the interval
    is split into equal pieces.  Domain boundaries and kinds are kept.
    """
    cfg = cfg or RefineConfig()
    new = mesh.copy()
    for d, spec in enumerate(new.domains):
        fr, ns = [-1.0], []
        for k in range(spec.n_intervals):
            edges, counts = _refine_interval(
                spec.fractions[k], spec.fractions[k + 1], int(spec.counts[k]), report.errors[d][k], tol, cfg
            )
            fr.extend(edges[1:])
            ns.extend(counts)
        fr[-1] = 1.0
        spec.fractions = np.array(fr)
        spec.counts = np.array(ns, dtype=int)
    new.validate()
    return new


def enrich(mesh: MeshStructure, report: ErrorReport, tol: float,
           cfg: Optional[RefineConfig] = None) -> MeshStructure:
    """Regular refinement that always adds points: when every interval
    already passes, each interval below the cap gains one collocation point."""
    cfg = cfg or RefineConfig()
    new = refine_regular(mesh, report, tol, cfg)
    if new.n_colloc > mesh.n_colloc:
        return new
    for spec in new.domains:
        spec.counts = np.minimum(spec.counts + 1, cfg.n_max)
    return new


def refine_constrained(mesh: MeshStructure, traj: Trajectory, report: ErrorReport, ocp: OcpDefinition,
                       tol_mesh: float, detection: Optional[DetectionConfig] = None,
                       cfg: Optional[RefineConfig] = None, q_max: int = 5, seed: int = 0,
                       force_enrich: bool = False):
    """Re-detect the arc structure on ``traj`` and rebuild the domains.

    The interval set handed to the decomposition is the regular refinement
    of ``mesh`` when the error test fails, else ``mesh`` itself, unless
    ``force_enrich`` asks for more points regardless.
    """
    if force_enrich:
        refined = enrich(mesh, report, tol_mesh, cfg)
    elif report.e_max > tol_mesh:
        refined = refine_regular(mesh, report, tol_mesh, cfg)
    else:
        refined = mesh
    intervals = global_intervals(refined, traj.interfaces)
    det = detect_all(traj, ocp.svics, detection)
    new = decompose(det, refined, ocp, traj.interfaces, intervals, q_max, seed)
    return new, det
