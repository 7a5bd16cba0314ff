"""The adaptive multiple-domain solution procedure and an hp-only baseline."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import AssemblyError, DetectionInconsistentError, EvaluationError
from .mesh import MeshStructure
from .model import OcpDefinition, Trajectory, initial_guess
from .nlp import SolverOptions, solve
from .refinement import ErrorReport, RefineConfig, enrich, estimate_error, refine_constrained, refine_regular
from .structure import DetectionConfig, DetectionReport
from .transcription import assemble

log = logging.getLogger(__name__)

TAGS = ("initial", "detection-rebuild", "regular-refine")
REASONS = ("converged", "max-iterations", "solver-failure", "detection-failure")


@dataclass
class SpocConfig:
    tol_mesh: float = 1e-6
    tol_constraint: float = 1e-8
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    max_mesh: int = 20
    mesh: tuple = (10, 4)
    solver: SolverOptions = field(default_factory=SolverOptions)
    refine: RefineConfig = field(default_factory=RefineConfig)
    q_max: int = 5
    seed: int = 0
    oversample: int = 10
    max_detection_retries: int = 3
    # barrier start for warm-started solves; a failure is retried cold
    warm_mu_init: float = 1e-5
    warm_bound_push: float = 1e-5

    def __post_init__(self):
        if not (self.tol_mesh > 0 and self.tol_constraint > 0):
            raise ValueError("tolerances must be positive")
        if self.max_mesh < 1:
            raise ValueError("max_mesh must be at least 1")
        k, n = self.mesh
        if k < 1 or n < 2:
            raise ValueError("initial mesh needs K >= 1 intervals of N >= 2 points")


@dataclass
class IterationRecord:
    index: int
    tag: str
    mesh: MeshStructure
    status: str
    objective: float
    nlp_iterations: int
    wall_time: float
    trajectory: Optional[Trajectory]
    errors: Optional[ErrorReport]
    detection: Optional[DetectionReport] = None

    @property
    def e_max(self) -> float:
        return np.inf if self.errors is None else self.errors.e_max

    @property
    def delta_c(self) -> float:
        return np.inf if self.errors is None else self.errors.delta_c

    def summary(self) -> dict:
        return {
            "M": self.index,
            "tag": self.tag,
            "status": self.status,
            "objective": self.objective,
            "e_max": self.e_max,
            "delta_c": self.delta_c,
            "nlp_iterations": self.nlp_iterations,
            "wall_time": self.wall_time,
            "domains": self.mesh.classification(),
            "n_intervals": self.mesh.n_intervals,
            "n_colloc": self.mesh.n_colloc,
            "interfaces": None if self.trajectory is None else list(self.trajectory.interfaces),
        }


@dataclass
class SpocRun:
    mode: str
    iterations: list
    reason: str
    best: int
    wall_time: float
    problem: str = ""

    @property
    def final(self) -> IterationRecord:
        if self.reason == "converged":
            return self.iterations[-1]
        return self.iterations[self.best]

    @property
    def trajectory(self) -> Trajectory:
        return self.final.trajectory

    @property
    def cost(self) -> float:
        return self.final.objective

    @property
    def switch_times(self) -> list:
        """Optimized interior interface times of the reported iterate."""
        if self.final.trajectory is None:
            return []
        return list(self.final.trajectory.interfaces[1:-1])

    @property
    def converged(self) -> bool:
        return self.reason == "converged"

    def summary(self) -> dict:
        f = self.final
        return {
            "problem": self.problem,
            "mode": self.mode,
            "reason": self.reason,
            "cost": f.objective,
            "delta_c": f.delta_c,
            "e_max": f.e_max,
            "switch_times": self.switch_times,
            "final_state": None if f.trajectory is None else f.trajectory.segments[-1].y[-1].tolist(),
            "mesh_iterations": len(self.iterations) - 1,
            "reported_iteration": f.index,
            "wall_time": self.wall_time,
            "history": [r.summary() for r in self.iterations],
        }


def _lex_less(a, b):
    return (a.delta_c, a.e_max) < (b.delta_c, b.e_max)


class _Runner:
    def __init__(self, ocp: OcpDefinition, cfg: SpocConfig, mode: str):
        self.ocp = ocp
        self.cfg = cfg
        self.mode = mode
        self.records: list = []
        self.best = None
        self.t_start = time.perf_counter()

    def _attempts(self, warm):
        cold = self.cfg.solver
        if not warm:
            return [cold]
        p = self.cfg.warm_bound_push
        return [replace(cold, mu_init=self.cfg.warm_mu_init, bound_push=p, bound_frac=p), cold]

    def solve_on(self, mesh, guess: Trajectory, index, tag, detection=None, warm=True) -> IterationRecord:
        ocp = self.ocp
        t0 = time.perf_counter()
        n_it = 0
        try:
            tr = assemble(ocp, mesh)
            problem = tr.problem()
            x0 = tr.initial_point(guess)
            for opts in self._attempts(warm):
                res = solve(problem, x0, opts)
                n_it += res.iterations
                if res.success:
                    break
                log.info("M=%d: %s (%s)", index, res.status, res.message)
        except (AssemblyError, EvaluationError) as exc:
            log.warning("iteration %d: %s", index, exc)
            rec = IterationRecord(index, tag, mesh, "error", np.nan, 0, time.perf_counter() - t0, None, None, detection)
            self.records.append(rec)
            return rec
        traj = tr.extract(res.x)
        try:
            err = estimate_error(traj, mesh, ocp, self.cfg.oversample)
        except EvaluationError:
            err = None
        rec = IterationRecord(index, tag, mesh, res.status, float(res.objective), n_it,
                              time.perf_counter() - t0, traj, err, detection)
        self.records.append(rec)
        if res.status in ("optimal", "acceptable") and err is not None:
            if self.best is None or _lex_less(rec, self.records[self.best]):
                self.best = len(self.records) - 1
        log.info("M=%d %-17s %-10s J=%.10g e_max=%.3e dc=%.3e", index, tag, res.status,
                 rec.objective, rec.e_max, rec.delta_c)
        return rec

    def done(self, reason) -> SpocRun:
        best = self.best if self.best is not None else len(self.records) - 1
        return SpocRun(self.mode, self.records, reason, best, time.perf_counter() - self.t_start, self.ocp.name)

    def met(self, rec) -> bool:
        return rec.status in ("optimal", "acceptable") and rec.errors is not None and (
            rec.e_max <= self.cfg.tol_mesh and rec.delta_c <= self.cfg.tol_constraint
        )


def _initial(ocp, cfg):
    K, N = cfg.mesh
    mesh = MeshStructure.single(ocp.t0, ocp.tf, K, N)
    guess = initial_guess(ocp, [ocp.t0.guess, ocp.tf.guess])
    return mesh, guess


def solve_spoc(ocp: OcpDefinition, cfg: Optional[SpocConfig] = None) -> SpocRun:
    """Detect the constrained-arc structure and iterate to both tolerances."""
    cfg = cfg or SpocConfig()
    run = _Runner(ocp, cfg, "spoc")
    mesh, guess = _initial(ocp, cfg)
    rec = run.solve_on(mesh, guess, 0, "initial", warm=False)
    if not _usable(rec):
        return run.done("solver-failure")
    if not ocp.svics and run.met(rec):
        return run.done("converged")
    last_good = rec
    failures = retries = 0
    M = 0
    prev_dc = np.inf
    while True:
        # branch on the last accepted solution
        det = None
        if M == 0 or rec.delta_c > cfg.tol_constraint:
            # a detection-only retry that did not cut the violation tenfold
            # is repeated on an enriched mesh
            stalled = rec.e_max <= cfg.tol_mesh and rec.delta_c > 0.1 * prev_dc
            prev_dc = rec.delta_c
            try:
                mesh, det = refine_constrained(rec.mesh, rec.trajectory, rec.errors, ocp, cfg.tol_mesh,
                                               cfg.detection, cfg.refine, cfg.q_max, cfg.seed,
                                               force_enrich=stalled)
                tag = "detection-rebuild"
                retries = 0
            except DetectionInconsistentError as exc:
                retries += 1
                log.warning("detection failed (%d): %s", retries, exc)
                if retries >= cfg.max_detection_retries:
                    return run.done("detection-failure")
                mesh = enrich(rec.mesh, rec.errors, cfg.tol_mesh, cfg.refine)
                tag = "regular-refine"
        else:
            prev_dc = np.inf
            mesh = refine_regular(rec.mesh, rec.errors, cfg.tol_mesh, cfg.refine)
            tag = "regular-refine"
        while True:
            M += 1
            rec = run.solve_on(mesh, last_good.trajectory, M, tag, det)
            if _usable(rec):
                failures = 0
                last_good = rec
                break
            failures += 1
            if failures >= 2:
                return run.done("solver-failure")
            if M >= cfg.max_mesh:
                return run.done("max-iterations")
            # Re-detecting on the same solution would rebuild the same NLP;
            # refine the last accepted structure instead and detect again
            # on the solution that produces.
            mesh = enrich(last_good.mesh, last_good.errors, cfg.tol_mesh, cfg.refine)
            tag, det = "regular-refine", None
        if run.met(rec):
            assert rec.e_max <= cfg.tol_mesh and rec.delta_c <= cfg.tol_constraint
            return run.done("converged")
        if M >= cfg.max_mesh:
            return run.done("max-iterations")


def _usable(rec) -> bool:
    return rec.trajectory is not None and rec.errors is not None and rec.status in ("optimal", "acceptable")


def solve_baseline(ocp: OcpDefinition, cfg: Optional[SpocConfig] = None) -> SpocRun:
    """Same transcription with the SVICs as plain inequalities and hp
    refinement only; stops once the mesh tolerance holds."""
    cfg = cfg or SpocConfig()
    run = _Runner(ocp, cfg, "baseline")
    mesh, guess = _initial(ocp, cfg)
    M = 0
    tag = "initial"
    failures = 0
    while True:
        rec = run.solve_on(mesh, guess, M, tag, warm=M > 0)
        ok = rec.trajectory is not None and rec.status in ("optimal", "acceptable") and rec.errors is not None
        if ok and rec.e_max <= cfg.tol_mesh:
            return run.done("converged")
        if M >= cfg.max_mesh:
            return run.done("max-iterations")
        if not ok:
            failures += 1
            if failures >= 2 or M == 0:
                return run.done("solver-failure")
            rec = run.records[run.best]
        else:
            failures = 0
        mesh = refine_regular(rec.mesh, rec.errors, cfg.tol_mesh, cfg.refine)
        guess = rec.trajectory
        tag = "regular-refine"
        M += 1


@dataclass
class Comparison:
    spoc: SpocRun
    baseline: SpocRun
    rows: list

    def table(self) -> str:
        keys = ["mode", "reason", "cost", "cost_error", "delta_c", "e_max", "switch_times", "mesh_iterations", "wall_time"]
        lines = ["  ".join(f"{k:>16}" for k in keys)]
        for r in self.rows:
            lines.append("  ".join(f"{_fmt(r.get(k)):>16}" for k in keys))
        return "\n".join(lines)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6e}"
    if isinstance(v, list):
        return ",".join(f"{x:.6g}" for x in v)
    return str(v)


def compare_baseline(ocp: OcpDefinition, cfg: Optional[SpocConfig] = None, analytic=None) -> Comparison:
    """Run the multiple-domain procedure and the hp-only baseline side by side."""
    cfg = cfg or SpocConfig()
    spoc = solve_spoc(ocp, cfg)
    base = solve_baseline(ocp, cfg)
    rows = []
    for r in (spoc, base):
        s = r.summary()
        row = {k: s[k] for k in ("mode", "reason", "cost", "delta_c", "e_max", "switch_times", "mesh_iterations", "wall_time")}
        if analytic is not None:
            row["cost_error"] = abs(r.cost - analytic.cost) / abs(analytic.cost)
            if analytic.switch_times and len(r.switch_times) == len(analytic.switch_times):
                row["switch_errors"] = [abs(a - b) / abs(b) for a, b in zip(r.switch_times, analytic.switch_times)]
        rows.append(row)
    return Comparison(spoc, base, rows)
