"""Legendre-Gauss-Radau nodes, weights, differentiation/integration matrices.

Nodes follow the flipped-Radau convention used for collocation: the first
node is -1 (collocated) and +1 is a separate, non-collocated support point.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_NODES = 64


@dataclass(frozen=True)
class LgrGrid:
    """Collocation grid on a single mesh interval mapped to [-1, 1].

    Attributes:
        n_colloc: number of collocation points N.
        nodes: N collocation nodes followed by the support point +1.
        weights: N quadrature weights.
        diff_matrix: N x (N+1) differentiation matrix.
    """

    n_colloc: int
    nodes: np.ndarray
    weights: np.ndarray
    diff_matrix: np.ndarray

    @property
    def colloc_nodes(self) -> np.ndarray:
        return self.nodes[:-1]


@dataclass(frozen=True)
class IntegrationGrid:
    m: int
    nodes: np.ndarray
    int_matrix: np.ndarray


def _legendre_pair(n: int, x: np.ndarray):
    """Return P_{n-1}, P_n and their derivatives at x (n >= 1)."""
    p_prev = np.ones_like(x)
    p = x.copy()
    dp_prev = np.zeros_like(x)
    dp = np.ones_like(x)
    for k in range(1, n):
        p_next = ((2 * k + 1) * x * p - k * p_prev) / (k + 1)
        dp_next = dp_prev + (2 * k + 1) * p
        p_prev, p = p, p_next
        dp_prev, dp = dp, dp_next
    return p_prev, p, dp_prev, dp


def _check_count(n, name="n"):
    if int(n) != n or n < 1:
        raise ValueError(f"{name} must be a positive integer, got {n!r}")
    if n > MAX_NODES + 1:
        raise ValueError(f"{name}={n} exceeds the supported maximum {MAX_NODES}")
    return int(n)


@lru_cache(maxsize=None)
def _nodes_cached(n: int) -> np.ndarray:
    if n == 1:
        x = np.array([-1.0])
    else:
        # Chebyshev-Gauss-Radau points as starting guesses
        x = -np.cos(2.0 * np.pi * np.arange(n) / (2 * n - 1))
        x[0] = -1.0
        inner = x[1:].copy()
        for _ in range(100):
            p0, p1, dp0, dp1 = _legendre_pair(n, inner)
            step = (p0 + p1) / (dp0 + dp1)
            inner -= step
            if np.max(np.abs(step)) < 1e-15:
                break
        # one more polish step after the tolerance is met
        p0, p1, dp0, dp1 = _legendre_pair(n, inner)
        inner -= (p0 + p1) / (dp0 + dp1)
        x[1:] = np.sort(inner)
    x.setflags(write=False)
    return x


def lgr_nodes(n: int) -> np.ndarray:
    """LGR collocation nodes: the n roots of P_{n-1} + P_n, starting at -1."""
    return _nodes_cached(_check_count(n))


@lru_cache(maxsize=None)
def _weights_cached(n: int) -> np.ndarray:
    x = _nodes_cached(n)
    w = np.empty(n)
    w[0] = 2.0 / n**2
    if n > 1:
        p_nm1, _, _, _ = _legendre_pair(n, x[1:])
        w[1:] = (1.0 - x[1:]) / (n**2 * p_nm1**2)
    w.setflags(write=False)
    return w


def lgr_weights(n: int) -> np.ndarray:
    """Quadrature weights for the n-point LGR rule (exact to degree 2n-2)."""
    return _weights_cached(_check_count(n))


def barycentric_weights(nodes) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=float)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    if np.any(diff == 0.0):
        raise ValueError("interpolation nodes must be distinct")
    return 1.0 / np.prod(diff, axis=1)


def support_diff_matrix(nodes) -> np.ndarray:
    """Square differentiation matrix of the Lagrange basis on ``nodes``."""
    nodes = np.asarray(nodes, dtype=float)
    w = barycentric_weights(nodes)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def differentiation_matrix(grid) -> np.ndarray:
    """N x (N+1) LGR differentiation matrix.

    ``grid`` is either an :class:`LgrGrid` or the N+1 support nodes
    (collocation nodes followed by +1).
    """
    nodes = grid.nodes if isinstance(grid, LgrGrid) else np.asarray(grid, float)
    return support_diff_matrix(nodes)[:-1]


@lru_cache(maxsize=None)
def lgr_grid(n: int) -> LgrGrid:
    """Cached :class:`LgrGrid` with ``n`` collocation points."""
    n = _check_count(n)
    nodes = np.append(_nodes_cached(n), 1.0)
    D = support_diff_matrix(nodes)[:-1]
    nodes.setflags(write=False)
    D.setflags(write=False)
    return LgrGrid(n, nodes, _weights_cached(n), D)


def interpolation_matrix(nodes, queries) -> np.ndarray:
    """Matrix E with E @ values = interpolant of (nodes, values) at queries."""
    nodes = np.asarray(nodes, dtype=float)
    queries = np.atleast_1d(np.asarray(queries, dtype=float))
    w = barycentric_weights(nodes)
    diff = queries[:, None] - nodes[None, :]
    exact = diff == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = w[None, :] / diff
        E = terms / terms.sum(axis=1, keepdims=True)
    rows = np.any(exact, axis=1)
    E[rows] = exact[rows].astype(float)
    return E


def interpolate(values, nodes, query):
    """Barycentric (second form) evaluation of the interpolant at ``query``.

    ``values`` may carry trailing dimensions (one column per component).
    Scalar query gives a scalar (or 1-D for multi-column values).
    """
    values = np.asarray(values, dtype=float)
    E = interpolation_matrix(nodes, query)
    out = E @ values
    if np.ndim(query) == 0:
        return out[0]
    return out


@lru_cache(maxsize=None)
def _int_matrix_cached(m: int) -> IntegrationGrid:
    nodes = _nodes_cached(m)
    ends = np.append(nodes[1:], 1.0)
    gx, gw = np.polynomial.legendre.leggauss(m // 2 + 2)
    I = np.empty((m, m))
    for j, e in enumerate(ends):
        half = (e + 1.0) / 2.0
        pts = -1.0 + half * (gx + 1.0)
        I[j] = half * (gw @ interpolation_matrix(nodes, pts))
    I.setflags(write=False)
    return IntegrationGrid(m, nodes, I)


def integration_matrix(m: int) -> IntegrationGrid:
    """M x M LGR integration matrix.

    Row j integrates the degree M-1 interpolant of derivative samples at the
    M LGR nodes from -1 to the (j+1)-th node, the last row reaching +1.
    """
    return _int_matrix_cached(_check_count(m, "m"))


def map_time(tau, t_left, t_right):
    """Affine map from [-1, 1] onto [t_left, t_right]."""
    if not t_right > t_left:
        raise ValueError(f"degenerate interval [{t_left}, {t_right}]")
    return (t_right - t_left) / 2.0 * np.asarray(tau) + (t_right + t_left) / 2.0
