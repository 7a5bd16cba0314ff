"""Built-in benchmark problems."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import UnsupportedRegimeError
from .model import OcpDefinition, SvicSpec, TimeSpec

DEG = np.pi / 180.0


@dataclass
class AnalyticSolution:
    state: Callable  # t -> (n_t, n_y)
    control: Callable  # t -> (n_t, n_u)
    cost: float
    switch_times: list = field(default_factory=list)


@dataclass
class BenchmarkProblem:
    name: str
    ocp: OcpDefinition
    analytic: Optional[AnalyticSolution] = None
    config: dict = field(default_factory=dict)
    # variable name -> unit string for exported series
    units: dict = field(default_factory=dict)
    # extra exported series: name -> (fn(Y, t) -> values, unit)
    outputs: dict = field(default_factory=dict)
    # headline numbers of a solution: name -> (fn(final state) -> float, unit)
    report: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Bryson-Denham


def _bd_dynamics(y, u, t):
    return [y[1], u[0]]


def _bd_lagrange(y, u, t):
    return 0.5 * u[0] * u[0]


def _bryson_denham_oracle(L: float) -> AnalyticSolution:
    a = 3.0 * L

    def state(t):
        t = np.atleast_1d(np.asarray(t, float))
        x = np.full_like(t, L)
        v = np.zeros_like(t)
        m1 = t <= a
        m3 = t >= 1.0 - a
        s1 = 1.0 - t[m1] / a
        s3 = 1.0 - (1.0 - t[m3]) / a
        x[m1] = L * (1.0 - s1**3)
        v[m1] = s1**2
        x[m3] = L * (1.0 - s3**3)
        v[m3] = -(s3**2)
        return np.column_stack([x, v])

    def control(t):
        t = np.atleast_1d(np.asarray(t, float))
        u = np.zeros_like(t)
        m1 = t <= a
        m3 = t >= 1.0 - a
        u[m1] = -2.0 / a * (1.0 - t[m1] / a)
        u[m3] = -2.0 / a * (1.0 - (1.0 - t[m3]) / a)
        return u[:, None]

    return AnalyticSolution(state, control, 4.0 / (9.0 * L), [a, 1.0 - a])


def _unconstrained_bd_oracle() -> AnalyticSolution:
    def state(t):
        t = np.atleast_1d(np.asarray(t, float))
        return np.column_stack([t - t**2, 1.0 - 2.0 * t])

    def control(t):
        return np.full((np.size(t), 1), -2.0)

    return AnalyticSolution(state, control, 2.0, [])


def bryson_denham(limit: float = 1.0 / 8.0, inactive_ok: bool = False) -> BenchmarkProblem:
    """Double integrator with x(t) <= limit, minimizing 0.5 * int u^2.

    The analytic boundary-arc solution holds for 0 < limit <= 1/6.  With
    ``inactive_ok`` a limit >= 1/4 is accepted too; the constraint then never
    binds and the oracle is the unconstrained solution x = t - t^2.
    """
    L = float(limit)
    if 0.0 < L <= 1.0 / 6.0:
        oracle = _bryson_denham_oracle(L)
    elif inactive_ok and L >= 0.25:
        oracle = _unconstrained_bd_oracle()
    else:
        raise UnsupportedRegimeError(
            f"limit={L} is outside (0, 1/6] where the boundary-arc solution holds"
        )
    ocp = OcpDefinition(
        n_y=2,
        n_u=1,
        dynamics=_bd_dynamics,
        running_cost=_bd_lagrange,
        t0=TimeSpec.fixed(0.0),
        tf=TimeSpec.fixed(1.0),
        initial_state=[0.0, 1.0],
        final_state=[0.0, -1.0],
        svics=[SvicSpec(lambda y, t: y[0], "upper", L, name="x")],
        state_names=["x", "v"],
        control_names=["u"],
        name="bryson-denham",
    )
    return BenchmarkProblem(
        "bryson-denham",
        ocp,
        oracle,
        {"tol_mesh": 1e-6, "mesh": (10, 4), "limit": L},
        units={"x": "-", "v": "-", "u": "-", "t": "-"},
    )


# ---------------------------------------------------------------------------
# reusable launch vehicle entry with a stagnation-point heating limit

RE = 6371203.92  # m
INV_BETA = 7254.24  # m
BETA = 1.0 / INV_BETA
RHO0 = 1.22557083  # kg/m^3
MU = 3.98603195e14  # m^3/s^2
MASS = 92079.2526  # kg
SREF = 249.909178  # m^2
QHAT = 199.87e6  # W/m^2
CL0, CL1 = -0.2070, 1.6756
CD0, CD1, CD2 = 0.0785, -0.3529, 2.0400
VC = float(np.sqrt(MU / RE))


def heat_rate(h, v):
    """Stagnation-point heating rate in W/m^2."""
    return QHAT * np.sqrt(np.exp(-BETA * np.asarray(h))) * (np.asarray(v) / VC) ** 3.15


def log_heat_rate(y, t):
    return np.log(QHAT) - 0.5 * BETA * y[0] + 3.15 * np.log(y[3] * (1.0 / VC))


def _rlv_dynamics(y, u, t):
    h, theta, phi, v, gamma, psi = y
    alpha, sigma = u
    r = RE + h
    g = MU / (r * r)
    rho = RHO0 * np.exp(-BETA * h)
    qS_m = 0.5 * rho * v * v * (SREF / MASS)
    lift = qS_m * (CL0 + CL1 * alpha)
    drag = qS_m * (CD0 + CD1 * alpha + CD2 * alpha * alpha)
    cg, sg = np.cos(gamma), np.sin(gamma)
    cpsi, spsi = np.cos(psi), np.sin(psi)
    return [
        v * sg,
        v * cg * spsi / (r * np.cos(phi)),
        v * cg * cpsi / r,
        -drag - g * sg,
        lift * np.cos(sigma) / v + cg * (v / r - g / v),
        lift * np.sin(sigma) / (v * cg) + v / r * cg * spsi * np.tan(phi),
    ]


def _rlv_endpoint(y0, t0, yf, tf):
    return -yf[2]


def reentry_vehicle(qdot_max: float = 1.5e6, terminal_heading: Optional[float] = None) -> BenchmarkProblem:
    """Crossrange maximization during entry with ``Qdot <= qdot_max`` [W/m^2].

    States (h, theta, phi, v, gamma, psi) in m, rad, rad, m/s, rad, rad;
    controls (alpha, sigma) in rad.  ``terminal_heading`` (deg) pins psi(tf);
    by default it is free.
    """
    if not qdot_max > 0:
        raise ValueError("qdot_max must be positive")
    final = [24384.0, None, None, 762.0, -5.0 * DEG, None]
    if terminal_heading is not None:
        final[5] = terminal_heading * DEG
    ocp = OcpDefinition(
        n_y=6,
        n_u=2,
        dynamics=_rlv_dynamics,
        endpoint_cost=_rlv_endpoint,
        t0=TimeSpec.fixed(0.0),
        tf=TimeSpec.free(100.0, 4000.0, 1000.0),
        initial_state=[79248.0, 0.0, 0.0, 7802.88, -1.0 * DEG, 90.0 * DEG],
        final_state=final,
        svics=[SvicSpec(log_heat_rate, "upper", float(np.log(qdot_max)), name="log_qdot")],
        state_bounds=(
            [0.0, -np.pi, -89 * DEG, 10.0, -89 * DEG, -np.pi],
            [80000.0, np.pi, 89 * DEG, 10000.0, 89 * DEG, np.pi],
        ),
        control_bounds=([-89 * DEG, -89 * DEG], [89 * DEG, 1 * DEG]),
        state_names=["h", "theta", "phi", "v", "gamma", "psi"],
        control_names=["alpha", "sigma"],
        name="rlv-entry",
    )
    return BenchmarkProblem(
        "rlv-entry",
        ocp,
        None,
        {"tol_mesh": 1e-8, "mesh": (10, 4), "qdot_max": qdot_max},
        units={"t": "s", "h": "m", "theta": "rad", "phi": "rad", "v": "m/s", "gamma": "rad",
               "psi": "rad", "alpha": "rad", "sigma": "rad", "log_qdot": "-"},
        outputs={
            "qdot": (lambda Y, t: heat_rate(Y[:, 0], Y[:, 3]), "W/m^2"),
            "qdot_MW": (lambda Y, t: 1e-6 * heat_rate(Y[:, 0], Y[:, 3]), "MW/m^2"),
        },
        report={"crossrange": (lambda yf: float(yf[2]) / DEG, "deg")},
    )


REGISTRY = {
    "bryson-denham": bryson_denham,
    "rlv-entry": reentry_vehicle,
}


def get_benchmark(name: str, **kwargs) -> BenchmarkProblem:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; known: {sorted(REGISTRY)}") from None
    return factory(**kwargs)
