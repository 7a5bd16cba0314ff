"""Continuous optimal control problem in Bolza form and trajectory containers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import lgr
from .autodiff import DerivativeStack, ProbeSet, detect_constraint_order, make_probes


@dataclass(frozen=True)
class TimeSpec:
    """Initial or final time: fixed when ``lower == upper``."""

    lower: float
    upper: float
    guess: float

    @classmethod
    def fixed(cls, value: float) -> "TimeSpec":
        return cls(value, value, value)

    @classmethod
    def free(cls, lower: float, upper: float, guess: Optional[float] = None) -> "TimeSpec":
        if guess is None:
            guess = 0.5 * (lower + upper)
        return cls(lower, upper, guess)

    @property
    def is_fixed(self) -> bool:
        return self.lower == self.upper


@dataclass(frozen=True)
class SvicSpec:
    """State-variable inequality constraint ``c(y, t) <= limit`` (or ``>=``)."""

    constraint_fn: Callable
    bound_kind: str
    limit: float
    name: str = "svic"

    def __post_init__(self):
        if self.bound_kind not in ("upper", "lower"):
            raise ValueError(f"bound_kind must be 'upper' or 'lower', got {self.bound_kind!r}")

    def value(self, y, t):
        return self.constraint_fn(y, t)

    def residual(self, y, t):
        """Canonical residual; <= 0 exactly when the constraint holds."""
        c = self.constraint_fn(y, t)
        return c - self.limit if self.bound_kind == "upper" else self.limit - c

    def canonical(self) -> Callable:
        """Canonical residual as an evaluator ``(y, u, t)``."""
        return lambda y, u, t: self.residual(y, t)


@dataclass(frozen=True)
class PathConstraint:
    """Ordinary path constraints ``lower <= c(y, u, t) <= upper``."""

    fn: Callable
    lower: Sequence[float]
    upper: Sequence[float]
    name: str = "path"

    @property
    def size(self) -> int:
        return len(self.lower)


def _bounds(b, n):
    if b is None:
        return np.full(n, -np.inf), np.full(n, np.inf)
    lo = np.array([-np.inf if v is None else v for v in b[0]], dtype=float)
    hi = np.array([np.inf if v is None else v for v in b[1]], dtype=float)
    if lo.shape != (n,) or hi.shape != (n,):
        raise ValueError(f"bounds must have length {n}")
    if np.any(lo > hi):
        raise ValueError("lower bound exceeds upper bound")
    return lo, hi


@dataclass
class OcpDefinition:
    """Bolza problem: minimize M(y0, t0, yf, tf) + integral of L(y, u, t).

    Fixed endpoint values go in ``initial_state`` / ``final_state`` (``None``
    entries are free); anything more general goes in ``boundary_fn`` with
    ``boundary_bounds``.  All evaluators receive lists of components and must
    accept Dual inputs.
    """

    n_y: int
    n_u: int
    dynamics: Callable
    t0: TimeSpec
    tf: TimeSpec
    running_cost: Optional[Callable] = None
    endpoint_cost: Optional[Callable] = None
    initial_state: Optional[Sequence] = None
    final_state: Optional[Sequence] = None
    boundary_fn: Optional[Callable] = None
    boundary_bounds: Optional[tuple] = None
    path: list = field(default_factory=list)
    svics: list = field(default_factory=list)
    state_bounds: Optional[tuple] = None
    control_bounds: Optional[tuple] = None
    state_names: Optional[list] = None
    control_names: Optional[list] = None
    state_scale: Optional[Sequence] = None
    name: str = "ocp"

    def __post_init__(self):
        self.y_lower, self.y_upper = _bounds(self.state_bounds, self.n_y)
        self.u_lower, self.u_upper = _bounds(self.control_bounds, self.n_u)
        if self.initial_state is None:
            self.initial_state = [None] * self.n_y
        if self.final_state is None:
            self.final_state = [None] * self.n_y
        if len(self.initial_state) != self.n_y or len(self.final_state) != self.n_y:
            raise ValueError("endpoint specifications must have one entry per state")
        if self.boundary_fn is not None:
            lo, hi = (np.asarray(b, dtype=float) for b in self.boundary_bounds)
            if np.any(lo > hi):
                raise ValueError("b_min exceeds b_max")
            self.boundary_bounds = (lo, hi)
        if self.t0.lower > self.t0.upper or self.tf.lower > self.tf.upper:
            raise ValueError("time bounds are inverted")
        if self.state_names is None:
            self.state_names = [f"y{i}" for i in range(self.n_y)]
        if self.control_names is None:
            self.control_names = [f"u{i}" for i in range(self.n_u)]
        self._stacks: dict = {}

    @property
    def n_b(self) -> int:
        fixed = sum(v is not None for v in self.initial_state) + sum(
            v is not None for v in self.final_state
        )
        extra = 0 if self.boundary_fn is None else len(self.boundary_bounds[0])
        return fixed + extra

    @property
    def n_c(self) -> int:
        return sum(p.size for p in self.path) + len(self.svics)

    def probes(self, n: int = 16, seed: int = 0) -> ProbeSet:
        t_lo = self.t0.lower
        t_hi = self.tf.upper
        return make_probes(
            list(zip(self.y_lower, self.y_upper)),
            list(zip(self.u_lower, self.u_upper)),
            (t_lo, t_hi),
            n=n,
            seed=seed,
        )

    def derivative_stack(self, i: int, q_max: int = 5, seed: int = 0) -> DerivativeStack:
        """Derivative stack of SVIC ``i``, computed once and cached."""
        key = (i, q_max, seed)
        if key not in self._stacks:
            self._stacks[key] = detect_constraint_order(
                self.svics[i].canonical(), self.dynamics, self.probes(seed=seed), q_max
            )
        return self._stacks[key]

    def without_svics(self) -> "OcpDefinition":
        """Copy of the problem with the state constraints removed."""
        kw = {k: getattr(self, k) for k in _FIELDS}
        kw["svics"] = []
        return OcpDefinition(**kw)


_FIELDS = [
    "n_y", "n_u", "dynamics", "t0", "tf", "running_cost", "endpoint_cost",
    "initial_state", "final_state", "boundary_fn", "boundary_bounds", "path",
    "svics", "state_bounds", "control_bounds", "state_names", "control_names",
    "state_scale", "name",
]


@dataclass
class Segment:
    """One mesh interval: N+1 support times/states and N controls."""

    t: np.ndarray
    y: np.ndarray
    u: np.ndarray
    domain: int = 0

    @property
    def n(self) -> int:
        return len(self.u)

    def _local(self, tq):
        return 2.0 * (np.asarray(tq, float) - self.t[0]) / (self.t[-1] - self.t[0]) - 1.0

    def state_at(self, tq) -> np.ndarray:
        nodes = lgr.lgr_grid(self.n).nodes
        return lgr.interpolation_matrix(nodes, self._local(tq)) @ self.y

    def control_at(self, tq) -> np.ndarray:
        if self.n == 1:
            return np.repeat(self.u, np.size(tq), axis=0)
        nodes = lgr.lgr_grid(self.n).colloc_nodes
        return lgr.interpolation_matrix(nodes, self._local(tq)) @ self.u


@dataclass
class Trajectory:
    """Piecewise-polynomial state/control history over [t0, tf].

    ``interfaces`` lists the domain boundaries ``[t0, t_s1, ..., tf]``.
    """

    segments: list
    interfaces: list

    @property
    def t0(self) -> float:
        return float(self.segments[0].t[0])

    @property
    def tf(self) -> float:
        return float(self.segments[-1].t[-1])

    def flat(self):
        """Unique support grid: times, states (rows) and controls.

        Interval-boundary duplicates are merged; the control of the final
        non-collocated point is extrapolated from its interval.
        """
        ts, ys, us = [], [], []
        for seg in self.segments:
            ts.append(seg.t[:-1])
            ys.append(seg.y[:-1])
            us.append(seg.u)
        last = self.segments[-1]
        ts.append(last.t[-1:])
        ys.append(last.y[-1:])
        us.append(last.control_at(last.t[-1:]))
        return np.concatenate(ts), np.vstack(ys), np.vstack(us)

    def _locate(self, tq, side="left"):
        tq = np.atleast_1d(np.asarray(tq, float))
        ends = np.array([s.t[-1] for s in self.segments])
        idx = np.searchsorted(ends, tq, side=side)
        return tq, np.clip(idx, 0, len(self.segments) - 1)

    def state_at(self, tq) -> np.ndarray:
        tq, idx = self._locate(tq)
        out = np.empty((tq.size, self.segments[0].y.shape[1]))
        for k in np.unique(idx):
            m = idx == k
            out[m] = self.segments[k].state_at(tq[m])
        return out

    def control_at(self, tq) -> np.ndarray:
        # controls live at left interval ends, so knots belong to the right segment
        tq, idx = self._locate(tq, side="right")
        out = np.empty((tq.size, self.segments[0].u.shape[1]))
        for k in np.unique(idx):
            m = idx == k
            out[m] = self.segments[k].control_at(tq[m])
        return out

    def dense(self, oversample: int = 10):
        """Dense grid with ``oversample`` points per support gap, per segment."""
        ts, ys, us = [], [], []
        for seg in self.segments:
            m = oversample * seg.n
            tq = np.linspace(seg.t[0], seg.t[-1], m + 1)[:-1]
            ts.append(tq)
            ys.append(seg.state_at(tq))
            us.append(seg.control_at(tq))
        last = self.segments[-1]
        ts.append(last.t[-1:])
        ys.append(last.y[-1:])
        us.append(last.control_at(last.t[-1:]))
        return np.concatenate(ts), np.vstack(ys), np.vstack(us)


def _midpoint(lo, hi):
    if np.isfinite(lo) and np.isfinite(hi):
        return 0.5 * (lo + hi)
    if np.isfinite(lo):
        return max(lo, 0.0)
    if np.isfinite(hi):
        return min(hi, 0.0)
    return 0.0


def initial_guess(ocp: OcpDefinition, grid) -> Trajectory:
    """Straight-line/constant initial guess on a flattened time grid.

    States with both endpoint values fixed are linear between them, states
    with one fixed endpoint are constant at that value, the rest sit at the
    middle of their bounds.  Controls are constant at their bound midpoints.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("time grid is empty")
    if grid.size == 1:
        grid = np.array([grid[0], grid[0] + 1.0])
    s = (grid - grid[0]) / (grid[-1] - grid[0])
    Y = np.empty((grid.size, ocp.n_y))
    for i in range(ocp.n_y):
        a, b = ocp.initial_state[i], ocp.final_state[i]
        if a is not None and b is not None:
            Y[:, i] = a + (b - a) * s
        elif a is not None:
            Y[:, i] = a
        elif b is not None:
            Y[:, i] = b
        else:
            Y[:, i] = _midpoint(ocp.y_lower[i], ocp.y_upper[i])
    u = np.array([_midpoint(lo, hi) for lo, hi in zip(ocp.u_lower, ocp.u_upper)])
    segs = [
        Segment(grid[k : k + 2].copy(), Y[k : k + 2].copy(), u[None, :].copy())
        for k in range(grid.size - 1)
    ]
    return Trajectory(segs, [float(grid[0]), float(grid[-1])])
