"""Detection of constrained arcs and decomposition into time domains."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import AssumptionViolatedError, DetectionInconsistentError
from .mesh import DomainSpec, MeshStructure
from .model import SvicSpec, Trajectory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectionConfig:
    epsilon: float = 1e-4
    nu: float = 5.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("detection epsilon must be positive")
        if not self.nu > 0:
            raise ValueError("nu must be positive")


@dataclass
class SwitchEstimate:
    kind: str  # "activation" | "deactivation"
    t_hat: float
    window: tuple
    index: int
    at_tf: bool = False

    def to_dict(self) -> dict:
        return {"kind": self.kind, "t_hat": self.t_hat, "window": list(self.window),
                "index": self.index, "at_tf": self.at_tf}


@dataclass
class SvicDetection:
    svic: int
    name: str
    events: list
    delta: np.ndarray
    grid: np.ndarray
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "svic": self.svic,
            "name": self.name,
            "events": [e.to_dict() for e in self.events],
            "grid": self.grid.tolist(),
            "delta": self.delta.tolist(),
        }


@dataclass
class DetectionReport:
    per_svic: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def n_events(self) -> int:
        return sum(len(s.events) for s in self.per_svic)

    @property
    def empty(self) -> bool:
        return self.n_events == 0

    def events(self, svic: int = 0) -> list:
        for s in self.per_svic:
            if s.svic == svic:
                return s.events
        return []

    def to_dict(self) -> dict:
        return {"svics": [s.to_dict() for s in self.per_svic], "warnings": list(self.warnings)}


def screen(traj: Trajectory, svic: SvicSpec):
    """Relative distance of the constraint from its limit on the unique grid.

    Returns ``(grid, delta)``.
    """
    t, Y, _ = traj.flat()
    if t.size == 0:
        raise ValueError("trajectory is empty")
    c = np.asarray(svic.value([Y[:, i] for i in range(Y.shape[1])], t), dtype=float)
    c = np.broadcast_to(c, t.shape)
    lim = svic.limit
    return t, np.abs(c - lim) / (1.0 + abs(lim))


def detect(delta, grid, cfg: Optional[DetectionConfig] = None, svic: int = 0, name: str = "svic",
           t_bounds: Optional[tuple] = None) -> SvicDetection:
    """Locate activation and deactivation points from screening values.

    An interior point starts an arc when it and its right neighbour lie within
    ``epsilon`` of the limit while its left neighbour does not; it ends an arc
    in the mirrored situation.  An arc still active at the last grid point
    ends there (``at_tf``).  Single isolated sub-epsilon points are skipped
    with a warning.
    """
    cfg = cfg or DetectionConfig()
    delta = np.asarray(delta, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3 or delta.shape != grid.shape:
        raise ValueError("need matching delta/grid with at least 3 points")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    eps, nu = cfg.epsilon, cfg.nu
    below = delta <= eps
    if below[0]:
        raise AssumptionViolatedError(
            f"{name}: constraint is active at the start of the trajectory (delta={delta[0]:.3e})"
        )
    n = grid.size
    raw = []
    warnings = []
    for j in range(1, n):
        if not below[j]:
            continue
        left = bool(below[j - 1])
        last = j + 1 == n
        right = False if last else bool(below[j + 1])
        if not left and right:
            raw.append(("activation", j, False))
        elif left and not right:
            raw.append(("deactivation", j, last))
        elif not left and not right:
            msg = f"{name}: isolated point at t={grid[j]:.6g} within tolerance; ignored (possible touch point)"
            log.warning(msg)
            warnings.append(msg)
    expect = "activation"
    for kind, j, _ in raw:
        if kind != expect:
            raise DetectionInconsistentError(
                f"{name}: {kind} at t={grid[j]:.6g} breaks activation/deactivation alternation"
            )
        expect = "deactivation" if kind == "activation" else "activation"
    if expect == "deactivation":
        raise DetectionInconsistentError(f"{name}: activation without a matching deactivation")
    lo_t, hi_t = (grid[0], grid[-1]) if t_bounds is None else t_bounds
    events = []
    for kind, j, at_tf in raw:
        t = grid[j]
        if at_tf:
            win = (t, t)
        else:
            win = (t + nu * (grid[j - 1] - t), t + nu * (grid[j + 1] - t))
        win = (max(win[0], lo_t), min(win[1], hi_t))
        events.append(SwitchEstimate(kind, float(t), win, int(j), at_tf))
    for a, b in zip(events, events[1:]):
        mid = 0.5 * (a.t_hat + b.t_hat)
        a.window = (a.window[0], min(a.window[1], mid))
        b.window = (max(b.window[0], mid), b.window[1])
    return SvicDetection(svic, name, events, delta, grid, warnings)


def detect_all(traj: Trajectory, svics, cfg: Optional[DetectionConfig] = None,
               t_bounds: Optional[tuple] = None) -> DetectionReport:
    """Screen and detect every SVIC on ``traj``."""
    report = DetectionReport()
    for i, s in enumerate(svics):
        grid, delta = screen(traj, s)
        det = detect(delta, grid, cfg, svic=i, name=s.name, t_bounds=t_bounds)
        report.per_svic.append(det)
        report.warnings.extend(det.warnings)
    return report


# ---------------------------------------------------------------------------
# decomposition


def global_intervals(mesh: MeshStructure, interfaces) -> tuple:
    """Physical interval edges and point counts of a multiple-domain mesh."""
    edges, counts = [interfaces[0]], []
    for d, spec in enumerate(mesh.domains):
        a, b = interfaces[d], interfaces[d + 1]
        t = a + (spec.fractions + 1.0) * 0.5 * (b - a)
        edges.extend(t[1:].tolist())
        counts.extend(spec.counts.tolist())
    return np.array(edges), np.array(counts, dtype=int)


def _clip_intervals(edges, counts, a, b, sliver):
    inner = edges[(edges > a) & (edges < b)]
    pts = np.concatenate([[a], inner, [b]])
    mids = 0.5 * (pts[:-1] + pts[1:])
    owner = np.clip(np.searchsorted(edges, mids, side="right") - 1, 0, len(counts) - 1)
    ns = counts[owner].tolist()
    pts = pts.tolist()
    # merge pieces narrower than ``sliver`` into a neighbour
    i = 0
    while len(ns) > 1 and i < len(ns):
        if pts[i + 1] - pts[i] < sliver:
            j = i + 1 if i + 1 < len(ns) else i - 1
            keep = max(ns[i], ns[j])
            drop = i + 1 if j > i else i
            del pts[drop]
            lo = min(i, j)
            ns[lo : lo + 2] = [keep]
            i = 0
            continue
        i += 1
    return np.array(pts), np.array(ns, dtype=int)


def _ensure_two(pts, ns):
    pts, ns = list(pts), list(ns)
    while len(ns) < 2:
        k = int(np.argmax(np.diff(pts)))
        pts.insert(k + 1, 0.5 * (pts[k] + pts[k + 1]))
        ns.insert(k + 1, ns[k])
    return np.array(pts), np.array(ns, dtype=int)


def decompose(report: DetectionReport, prior: MeshStructure, ocp, interfaces=None,
              intervals: Optional[tuple] = None, q_max: int = 5, seed: int = 0) -> MeshStructure:
    """Split the horizon at the detected switches into U/C domains.

    ``intervals`` is the global (edges, counts) interval set to distribute;
    by default it is taken from ``prior`` at the given ``interfaces``.
    """
    if interfaces is None:
        interfaces = [ocp.t0.guess, ocp.tf.guess]
    interfaces = list(interfaces)
    if intervals is None:
        intervals = global_intervals(prior, interfaces)
    edges, counts = (np.asarray(v) for v in intervals)
    t0, tf = edges[0], edges[-1]
    arcs = []
    for det in report.per_svic:
        ev = det.events
        for a, d in zip(ev[0::2], ev[1::2]):
            arcs.append((a, d, det.svic))
    arcs.sort(key=lambda x: x[0].t_hat)
    for (a1, d1, s1), (a2, _, s2) in zip(arcs, arcs[1:]):
        if a2.t_hat <= d1.t_hat or (a2.window[0] < d1.window[1] and s1 != s2):
            raise DetectionInconsistentError(
                f"constrained arcs of SVICs {s1} and {s2} overlap near t={a2.t_hat:.6g}"
            )
    bounds = [t0]
    kinds = ["unconstrained"]
    svics = [None]
    windows = []
    for a, d, s in arcs:
        bounds.append(a.t_hat)
        windows.append(a)
        kinds.append("constrained")
        svics.append(s)
        if d.at_tf:
            break
        bounds.append(d.t_hat)
        windows.append(d)
        kinds.append("unconstrained")
        svics.append(None)
    bounds.append(tf)
    bounds = np.array(bounds)
    if np.any(np.diff(bounds) <= 0):
        raise DetectionInconsistentError(f"switch estimates are not strictly inside the horizon: {bounds}")
    sliver = 1e-6 * (tf - t0)
    domains = []
    for d in range(len(bounds) - 1):
        a, b = bounds[d], bounds[d + 1]
        pts, ns = _clip_intervals(edges, counts, a, b, max(sliver, 1e-3 * (b - a)))
        pts, ns = _ensure_two(pts, ns)
        fr = 2.0 * (pts - a) / (b - a) - 1.0
        fr[0], fr[-1] = -1.0, 1.0
        kind = kinds[d]
        stack = ocp.derivative_stack(svics[d], q_max, seed) if kind == "constrained" else None
        win = tuple(windows[d].window) if d < len(windows) else None
        guess = windows[d].t_hat if d < len(windows) else None
        domains.append(DomainSpec(fr, ns, kind, svics[d], stack, win, guess))
    for i in range(len(domains) - 2):
        if domains[i].window[1] > domains[i + 1].window[0]:
            raise DetectionInconsistentError("interface windows overlap after clipping")
    return MeshStructure(domains, prior.t0_spec, prior.tf_spec)
