"""Multiple-domain mesh description and decision-vector layout."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .autodiff import DerivativeStack
from .errors import MeshInvalidError
from .lgr import MAX_NODES
from .model import TimeSpec

MIN_NODES = 2


@dataclass
class DomainSpec:
    """One time domain; mesh intervals live on its local [-1, 1].

    ``window``/``t_guess`` describe the interface at the domain's right
    edge and are ``None`` on the final domain.
    """

    fractions: np.ndarray
    counts: np.ndarray
    kind: str = "unconstrained"
    svic: Optional[int] = None
    stack: Optional[DerivativeStack] = None
    window: Optional[tuple] = None
    t_guess: Optional[float] = None

    def __post_init__(self):
        self.fractions = np.asarray(self.fractions, dtype=float)
        self.counts = np.asarray(self.counts, dtype=int)

    @property
    def constrained(self) -> bool:
        return self.kind == "constrained"

    @property
    def n_intervals(self) -> int:
        return len(self.counts)

    @property
    def n_colloc(self) -> int:
        return int(self.counts.sum())

    def copy(self, **changes) -> "DomainSpec":
        d = replace(self, fractions=self.fractions.copy(), counts=self.counts.copy())
        return replace(d, **changes) if changes else d


@dataclass
class MeshStructure:
    domains: list
    t0_spec: TimeSpec
    tf_spec: TimeSpec

    def __post_init__(self):
        self.validate()

    @classmethod
    def single(cls, t0_spec: TimeSpec, tf_spec: TimeSpec, n_intervals: int = 10, n_colloc: int = 4):
        fr = np.linspace(-1.0, 1.0, n_intervals + 1)
        return cls([DomainSpec(fr, np.full(n_intervals, n_colloc))], t0_spec, tf_spec)

    @property
    def n_domains(self) -> int:
        return len(self.domains)

    @property
    def n_colloc(self) -> int:
        return sum(d.n_colloc for d in self.domains)

    @property
    def n_intervals(self) -> int:
        return sum(d.n_intervals for d in self.domains)

    def classification(self) -> list:
        return ["C" if d.constrained else "U" for d in self.domains]

    def validate(self):
        if not self.domains:
            raise MeshInvalidError("mesh has no domains")
        for i, d in enumerate(self.domains):
            fr = d.fractions
            if d.n_intervals < 1 or len(fr) != d.n_intervals + 1:
                raise MeshInvalidError(f"domain {i}: fractions/counts mismatch")
            if fr[0] != -1.0 or fr[-1] != 1.0 or np.any(np.diff(fr) <= 0):
                raise MeshInvalidError(f"domain {i}: interval boundaries must increase from -1 to 1")
            if np.any(d.counts < MIN_NODES) or np.any(d.counts > MAX_NODES):
                raise MeshInvalidError(f"domain {i}: collocation counts must lie in [{MIN_NODES}, {MAX_NODES}]")
            if d.constrained and (d.stack is None or d.stack.order < 1):
                raise MeshInvalidError(f"domain {i}: constrained domain needs a derivative stack")
            last = i == len(self.domains) - 1
            if not last and d.window is None:
                raise MeshInvalidError(f"domain {i}: interior interface needs a search window")
            if d.window is not None and not last:
                lo, hi = d.window
                if not lo <= hi:
                    raise MeshInvalidError(f"domain {i}: inverted interface window")
        wins = [d.window for d in self.domains[:-1]]
        for a, b in zip(wins, wins[1:]):
            if a[1] > b[0] + 1e-12 * max(1.0, abs(b[0])):
                raise MeshInvalidError("interface windows overlap")

    def copy(self) -> "MeshStructure":
        return MeshStructure([d.copy() for d in self.domains], self.t0_spec, self.tf_spec)

    def describe(self) -> dict:
        return {
            "domains": [
                {
                    "kind": d.kind,
                    "svic": d.svic,
                    "order": None if d.stack is None else d.stack.order,
                    "fractions": d.fractions.tolist(),
                    "counts": d.counts.tolist(),
                    "window": None if d.window is None else list(d.window),
                    "t_guess": d.t_guess,
                }
                for d in self.domains
            ]
        }


@dataclass
class DecisionLayout:
    """Positions of states, controls and time variables in the decision vector.

    States occupy ``n_colloc + 1`` rows: collocation point ``p`` owns state
    row ``p``, and the rows at domain joins are shared.  Controls have one row
    per collocation point.  Time variables follow: t0 (if free), the
    interior interfaces, tf (if free).
    """

    n_y: int
    n_u: int
    n_colloc: int
    domain_start: np.ndarray
    time_index: list
    time_fixed: list
    n_vars: int = field(init=False)

    def __post_init__(self):
        self.n_state_rows = self.n_colloc + 1
        self.u_offset = self.n_state_rows * self.n_y
        self.t_offset = self.u_offset + self.n_colloc * self.n_u
        self.n_vars = self.t_offset + sum(i is not None for i in self.time_index)

    @classmethod
    def from_mesh(cls, mesh: MeshStructure, n_y: int, n_u: int) -> "DecisionLayout":
        starts = np.cumsum([0] + [d.n_colloc for d in mesh.domains])
        D = mesh.n_domains
        base = mesh.n_colloc * (n_y + n_u) + n_y
        time_index, fixed = [], []
        k = base
        for j in range(D + 1):
            if j == 0:
                spec = mesh.t0_spec
            elif j == D:
                spec = mesh.tf_spec
            else:
                spec = None
            if spec is not None and spec.is_fixed:
                time_index.append(None)
                fixed.append(spec.lower)
            else:
                time_index.append(k)
                fixed.append(None)
                k += 1
        return cls(n_y, n_u, mesh.n_colloc, starts, time_index, fixed)

    def y_index(self, row, comp):
        return np.asarray(row) * self.n_y + comp

    def u_index(self, row, comp):
        return self.u_offset + np.asarray(row) * self.n_u + comp

    def unpack(self, x):
        x = np.asarray(x, dtype=float)
        if x.size != self.n_vars:
            raise ValueError(f"decision vector has length {x.size}, layout expects {self.n_vars}")
        Y = x[: self.u_offset].reshape(self.n_state_rows, self.n_y)
        U = x[self.u_offset : self.t_offset].reshape(self.n_colloc, self.n_u)
        T = np.array([x[i] if i is not None else f for i, f in zip(self.time_index, self.time_fixed)])
        return Y, U, T

    def pack(self, Y, U, T):
        x = np.empty(self.n_vars)
        x[: self.u_offset] = np.asarray(Y, float).ravel()
        x[self.u_offset : self.t_offset] = np.asarray(U, float).ravel()
        for i, v in zip(self.time_index, T):
            if i is not None:
                x[i] = v
        return x
