"""Forward-mode automatic differentiation with tagged, nestable dual numbers.

A :class:`Dual` carries a value and a sparse map ``direction -> partial``.
Values and partials may be floats, numpy arrays (vectorized over many
evaluation points) or Duals of an *older* tag, which is how higher-order
derivatives are formed.  Tags order the nesting: in a binary operation the
operand with the newer tag is differentiated, the other one is a constant.

Evaluators follow the convention ``g(y, u, t)`` with ``y`` and ``u`` lists of
components.  numpy ufuncs (``np.sin``, ``np.exp``...) dispatch to Duals.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import EvaluationError, OrderDetectionError

_tag_counter = itertools.count(1)


def new_tag() -> int:
    return next(_tag_counter)


class Dual:
    """Dual number ``val + sum_k der[k] * eps_k`` at nesting level ``tag``."""

    __slots__ = ("val", "der", "tag")
    __array_priority__ = 1000.0

    def __init__(self, val, der=None, tag=None):
        self.val = val
        self.der = {} if der is None else der
        self.tag = new_tag() if tag is None else tag

    def __repr__(self):
        return f"Dual({self.val!r}, {self.der!r}, tag={self.tag})"

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, _neg(other))

    def __rsub__(self, other):
        return _add(other, _neg(self))

    def __mul__(self, other):
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _div(self, other)

    def __rtruediv__(self, other):
        return _div(other, self)

    def __neg__(self):
        return _neg(self)

    def __pos__(self):
        return self

    def __pow__(self, other):
        return power(self, other)

    def __rpow__(self, other):
        return power(other, self)

    def __abs__(self):
        s = np.sign(value_of(self))
        return self * s

    # -- comparisons act on the primal value ------------------------------
    def __lt__(self, other):
        return value_of(self) < value_of(other)

    def __le__(self, other):
        return value_of(self) <= value_of(other)

    def __gt__(self, other):
        return value_of(self) > value_of(other)

    def __ge__(self, other):
        return value_of(self) >= value_of(other)

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs.get("out") is not None:
            return NotImplemented
        fn = _UFUNCS.get(ufunc)
        if fn is None:
            return NotImplemented
        return fn(*inputs)


DualScalar = Dual


def value_of(x):
    """Strip all dual levels and return the primal value."""
    while isinstance(x, Dual):
        x = x.val
    return x


def partial(x, tag: int, k):
    """Partial of ``x`` in direction ``k`` of level ``tag`` (0.0 if absent)."""
    if isinstance(x, Dual) and x.tag == tag:
        return x.der.get(k, 0.0)
    return 0.0


def primal(x, tag: int):
    """Value of ``x`` one level below ``tag``."""
    if isinstance(x, Dual) and x.tag == tag:
        return x.val
    return x


def _split(x, tag):
    if isinstance(x, Dual) and x.tag == tag:
        return x.val, x.der
    return x, None


def _top(a, b):
    ta = a.tag if isinstance(a, Dual) else 0
    tb = b.tag if isinstance(b, Dual) else 0
    return ta if ta >= tb else tb


def _add(a, b):
    tag = _top(a, b)
    if tag == 0:
        return a + b
    av, ad = _split(a, tag)
    bv, bd = _split(b, tag)
    if ad is None:
        der = dict(bd)
    elif bd is None:
        der = dict(ad)
    else:
        der = dict(ad)
        for k, v in bd.items():
            der[k] = der[k] + v if k in der else v
    return Dual(_add(av, bv), der, tag)


def _neg(a):
    if isinstance(a, Dual):
        return Dual(_neg(a.val), {k: _neg(v) for k, v in a.der.items()}, a.tag)
    return -a


def _mul(a, b):
    tag = _top(a, b)
    if tag == 0:
        return a * b
    av, ad = _split(a, tag)
    bv, bd = _split(b, tag)
    if ad is None:
        der = {k: _mul(av, v) for k, v in bd.items()}
    elif bd is None:
        der = {k: _mul(bv, v) for k, v in ad.items()}
    else:
        der = {k: _mul(bv, v) for k, v in ad.items()}
        for k, v in bd.items():
            t = _mul(av, v)
            der[k] = _add(der[k], t) if k in der else t
    return Dual(_mul(av, bv), der, tag)


def _div(a, b):
    # a direct quotient keeps the value part bit-identical to float division
    tag = _top(a, b)
    if tag == 0:
        return np.true_divide(a, b)
    av, ad = _split(a, tag)
    bv, bd = _split(b, tag)
    q = _div(av, bv)
    der = {} if ad is None else {k: _div(v, bv) for k, v in ad.items()}
    for k, v in (bd or {}).items():
        t = _neg(_div(_mul(q, v), bv))
        der[k] = _add(der[k], t) if k in der else t
    return Dual(q, der, tag)


def _chain(x, f, df):
    """Apply scalar function f with derivative df to x (Dual or plain)."""
    if not isinstance(x, Dual):
        return f(x)
    d = df(x.val)
    return Dual(f(x.val), {k: _mul(d, v) for k, v in x.der.items()}, x.tag)


def _recip(x):
    if not isinstance(x, Dual):
        return np.true_divide(1.0, x)
    inv = _recip(x.val)
    d = _neg(_mul(inv, inv))
    return Dual(inv, {k: _mul(d, v) for k, v in x.der.items()}, x.tag)


def sin(x):
    return _chain(x, sin, cos) if isinstance(x, Dual) else np.sin(x)


def cos(x):
    return _chain(x, cos, lambda v: _neg(sin(v))) if isinstance(x, Dual) else np.cos(x)


def tan(x):
    if isinstance(x, Dual):
        return _chain(x, tan, lambda v: 1.0 + tan(v) * tan(v))
    return np.tan(x)


def exp(x):
    return _chain(x, exp, exp) if isinstance(x, Dual) else np.exp(x)


def log(x):
    return _chain(x, log, _recip) if isinstance(x, Dual) else np.log(x)


def log10(x):
    return log(x) * (1.0 / np.log(10.0))


def sqrt(x):
    if isinstance(x, Dual):
        return _chain(x, sqrt, lambda v: 0.5 * _recip(sqrt(v)))
    return np.sqrt(x)


def sinh(x):
    return _chain(x, sinh, cosh) if isinstance(x, Dual) else np.sinh(x)


def cosh(x):
    return _chain(x, cosh, sinh) if isinstance(x, Dual) else np.cosh(x)


def tanh(x):
    if isinstance(x, Dual):
        return _chain(x, tanh, lambda v: 1.0 - tanh(v) * tanh(v))
    return np.tanh(x)


def arctan(x):
    if isinstance(x, Dual):
        return _chain(x, arctan, lambda v: _recip(1.0 + v * v))
    return np.arctan(x)


def arcsin(x):
    if isinstance(x, Dual):
        return _chain(x, arcsin, lambda v: _recip(sqrt(1.0 - v * v)))
    return np.arcsin(x)


def arccos(x):
    if isinstance(x, Dual):
        return _chain(x, arccos, lambda v: _neg(_recip(sqrt(1.0 - v * v))))
    return np.arccos(x)


def arctan2(y, x):
    if isinstance(y, Dual) or isinstance(x, Dual):
        return _atan2(y, x, x * x + y * y)
    return np.arctan2(y, x)


def _atan2(y, x, r2):
    tag = _top(y, x)
    yv, yd = _split(y, tag)
    xv, xd = _split(x, tag)
    val = arctan2(yv, xv)
    inv = _recip(primal(r2, tag))
    der = {}
    for k, v in (yd or {}).items():
        der[k] = _mul(_mul(xv, inv), v)
    for k, v in (xd or {}).items():
        t = _neg(_mul(_mul(yv, inv), v))
        der[k] = _add(der[k], t) if k in der else t
    return Dual(val, der, tag)


def power(a, b):
    """a ** b for any mix of Duals and plain numbers."""
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.power(a, b) if isinstance(a, np.ndarray) else a**b
    if not isinstance(b, Dual):
        if b == 0:
            return 1.0
        if b == 1:
            return a
        if b == 2:
            return a * a
        return _chain(a, lambda v: power(v, b), lambda v: b * power(v, b - 1))
    return exp(b * log(a))


def square(x):
    return x * x


def _cmp(op):
    return lambda a, b: op(value_of(a), value_of(b))


_UFUNCS = {
    np.add: _add,
    np.subtract: lambda a, b: _add(a, _neg(b)),
    np.multiply: _mul,
    np.true_divide: _div,
    np.negative: _neg,
    np.positive: lambda a: a,
    np.reciprocal: _recip,
    np.power: power,
    np.square: square,
    np.sin: sin,
    np.cos: cos,
    np.tan: tan,
    np.exp: exp,
    np.log: log,
    np.log10: log10,
    np.sqrt: sqrt,
    np.sinh: sinh,
    np.cosh: cosh,
    np.tanh: tanh,
    np.arctan: arctan,
    np.arcsin: arcsin,
    np.arccos: arccos,
    np.arctan2: arctan2,
    np.absolute: abs,
    np.less: _cmp(np.less),
    np.less_equal: _cmp(np.less_equal),
    np.greater: _cmp(np.greater),
    np.greater_equal: _cmp(np.greater_equal),
}


# ---------------------------------------------------------------------------
# derivative drivers


def _as_list(out):
    if isinstance(out, (list, tuple)):
        return list(out)
    if isinstance(out, np.ndarray) and out.dtype == object:
        return list(out)
    return [out]


def _bcast(x, shape):
    return np.broadcast_to(np.asarray(x, dtype=float), shape)


def point_jacobian(fn: Callable, z: Sequence, shape=None):
    """Values and local Jacobian of a vector function of ``len(z)`` inputs.

    Each entry of ``z`` is an array over evaluation points (or a scalar).
    Returns ``(vals, jac)`` with shapes ``(n_out, *shape)`` and
    ``(n_out, n_in, *shape)``.
    """
    if shape is None:
        shape = np.broadcast_shapes(*(np.shape(v) for v in z))
    tag = new_tag()
    seeds = [Dual(v, {k: 1.0}, tag) for k, v in enumerate(z)]
    out = _as_list(fn(seeds))
    n_in = len(z)
    vals = np.empty((len(out),) + tuple(shape))
    jac = np.zeros((len(out), n_in) + tuple(shape))
    for i, o in enumerate(out):
        if isinstance(o, Dual) and o.tag == tag:
            vals[i] = _bcast(o.val, shape)
            for k, d in o.der.items():
                jac[i, k] = _bcast(d, shape)
        else:
            vals[i] = _bcast(o, shape)
    return vals, jac


def point_hessian(fn: Callable, z: Sequence, shape=None):
    """Value, gradient and Hessian of a scalar function of ``len(z)`` inputs.

    Forward-over-forward: the outer level seeds Duals whose values are
    inner-level Duals.
    """
    if shape is None:
        shape = np.broadcast_shapes(*(np.shape(v) for v in z))
    inner = new_tag()
    outer = new_tag()
    seeds = [
        Dual(Dual(v, {k: 1.0}, inner), {k: 1.0}, outer) for k, v in enumerate(z)
    ]
    out = fn(seeds)
    n = len(z)
    grad = np.zeros((n,) + tuple(shape))
    hess = np.zeros((n, n) + tuple(shape))
    base = primal(out, outer)
    val = _bcast(primal(base, inner), shape)
    if isinstance(base, Dual) and base.tag == inner:
        for k, d in base.der.items():
            grad[k] = _bcast(d, shape)
    if isinstance(out, Dual) and out.tag == outer:
        for b, d in out.der.items():
            if isinstance(d, Dual) and d.tag == inner:
                for a, h in d.der.items():
                    hess[a, b] = _bcast(h, shape)
    return val, grad, hess


def jacobian(g: Callable, at, directions=None):
    """Sparse forward-mode Jacobian of ``g`` (list -> list) at ``at``.

    ``directions`` restricts seeding to a subset of input indices; the
    sparsity pattern is whatever the dependency sweep produced.
    """
    at = np.asarray(at, dtype=float).ravel()
    dirs = range(at.size) if directions is None else list(directions)
    tag = new_tag()
    seeded = set(dirs)
    z = [Dual(float(v), {k: 1.0}, tag) if k in seeded else float(v) for k, v in enumerate(at)]
    with np.errstate(all="ignore"):
        out = _as_list(g(z))
    rows, cols, vals = [], [], []
    for i, o in enumerate(out):
        if isinstance(o, Dual) and o.tag == tag:
            for k, d in o.der.items():
                d = float(value_of(d))
                if not np.isfinite(d):
                    raise EvaluationError(f"non-finite Jacobian entry at row {i}, column {k}")
                rows.append(i)
                cols.append(k)
                vals.append(d)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(out), at.size))


# ---------------------------------------------------------------------------
# constraint time derivatives


def _check_finite(x, what, y, t):
    v = np.asarray(value_of(x), dtype=float)
    if not np.all(np.isfinite(v)):
        loc = {"y": [np.asarray(value_of(c)).tolist() for c in y], "t": np.asarray(value_of(t)).tolist()}
        raise EvaluationError(f"{what} produced a non-finite value at {loc}")


def total_time_derivative(g: Callable, f: Callable) -> Callable:
    """Evaluator for dg/dt = dg/dy . f(y, u, t) + dg/dt along the dynamics.

    The returned evaluator accepts Dual inputs, so it can be fed back in to
    produce higher derivatives.
    """

    def dgdt(y, u, t):
        tag = new_tag()
        n = len(y)
        ys = [Dual(c, {i: 1.0}, tag) for i, c in enumerate(y)]
        ts = Dual(t, {n: 1.0}, tag)
        with np.errstate(all="ignore"):
            out = g(ys, u, ts)
            fy = _as_list(f(y, u, t))
            acc = partial(out, tag, n)
            for i in range(n):
                d = partial(out, tag, i)
                if not (isinstance(d, float) and d == 0.0):
                    acc = acc + d * fy[i]
        _check_finite(acc, "total time derivative", y, t)
        return acc

    return dgdt


@dataclass
class ProbeSet:
    """Deterministic sample points (one array per component)."""

    y: list
    u: list
    t: np.ndarray

    @property
    def size(self) -> int:
        return int(np.size(self.t))


def _box(lo, hi):
    lo = -np.inf if lo is None else lo
    hi = np.inf if hi is None else hi
    if np.isfinite(lo) and np.isfinite(hi):
        return lo, hi
    if np.isfinite(lo):
        return lo, lo + max(1.0, abs(lo))
    if np.isfinite(hi):
        return hi - max(1.0, abs(hi)), hi
    return -1.5, 2.5


def make_probes(y_bounds, u_bounds, t_bounds, n: int = 16, seed: int = 0) -> ProbeSet:
    """Scrambled-Halton probe points inside the variable boxes.

    Infinite bounds are replaced by asymmetric finite ranges so probes never
    sit on a symmetric midpoint.
    """
    from scipy.stats import qmc

    boxes = [_box(*b) for b in list(y_bounds) + list(u_bounds) + [t_bounds]]
    dim = len(boxes)
    sample = qmc.Halton(d=dim, scramble=True, seed=seed).random(n)
    lo = np.array([b[0] for b in boxes])
    hi = np.array([b[1] for b in boxes])
    # keep a small margin from the bounds themselves
    pts = lo + (hi - lo) * (0.02 + 0.96 * sample)
    ny, nu = len(y_bounds), len(u_bounds)
    return ProbeSet(
        y=[pts[:, i] for i in range(ny)],
        u=[pts[:, ny + i] for i in range(nu)],
        t=pts[:, -1],
    )


def control_gradient(g: Callable, probes: ProbeSet) -> np.ndarray:
    """|dg/du_i| at every probe, shape (n_u, n_probes)."""
    tag = new_tag()
    us = [Dual(c, {i: 1.0}, tag) for i, c in enumerate(probes.u)]
    out = g(probes.y, us, probes.t)
    grad = np.zeros((len(us), probes.size))
    for i in range(len(us)):
        grad[i] = np.abs(_bcast(value_of(partial(out, tag, i)), (probes.size,)))
    return grad


def depends_on_control(g: Callable, probes: ProbeSet, threshold: float = 1e-10) -> bool:
    """True iff some |dg/du_i| exceeds ``threshold`` at a probe point."""
    if probes.size < 1:
        raise ValueError("at least one probe point is required")
    with np.errstate(all="ignore"):
        grad = control_gradient(g, probes)
    finite = np.all(np.isfinite(grad), axis=0)
    if not np.any(finite):
        raise EvaluationError("control gradient is non-finite at every probe point")
    return bool(np.any(grad[:, finite] > threshold))


@dataclass
class DerivativeStack:
    """[c, c', ..., c^(q)] of one canonicalized path constraint."""

    order: int
    derivative_fns: list
    control_dependent: list = field(default_factory=list)
    n_u: int = 0

    def level(self, k: int) -> Callable:
        return self.derivative_fns[k]

    @property
    def highest(self) -> Callable:
        return self.derivative_fns[self.order]


def detect_constraint_order(
    constraint: Callable,
    dynamics: Callable,
    probes: ProbeSet,
    q_max: int = 5,
) -> DerivativeStack:
    """Differentiate ``constraint`` along the dynamics until a control appears.

    ``constraint`` is an evaluator ``(y, u, t)`` that must not depend on u.
    """
    if q_max < 1:
        raise ValueError("q_max must be >= 1")
    fns = [constraint]
    flags = [depends_on_control(constraint, probes)]
    if flags[0]:
        raise OrderDetectionError("path constraint depends on the control; not a state constraint")
    for _ in range(q_max):
        nxt = total_time_derivative(fns[-1], dynamics)
        fns.append(nxt)
        flags.append(depends_on_control(nxt, probes))
        if flags[-1]:
            return DerivativeStack(len(fns) - 1, fns, flags, len(probes.u))
    raise OrderDetectionError(
        f"no control dependence after {q_max} time derivatives; "
        "the constraint may be uncontrollable or mis-specified"
    )


def tangency_residuals(stack: DerivativeStack, y, t, u=None):
    """[c, c', ..., c^(q-1)] evaluated at (y, t)."""
    if u is None:
        u = [0.0] * stack.n_u
    return [fn(list(y), list(u), t) for fn in stack.derivative_fns[: stack.order]]
