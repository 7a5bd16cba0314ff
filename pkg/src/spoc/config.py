"""User-defined problems from JSON files.

Expressions are strings restricted to arithmetic, powers, numeric literals,
declared names and a fixed set of smooth functions.  They are parsed with
:mod:`ast` and compiled into closures that accept floats, arrays or Duals;
nothing is passed to ``eval``.

A minimal file::

    {
      "name": "double-integrator",
      "states": ["x", "v"],
      "controls": ["u"],
      "parameters": {"L": 0.125},
      "dynamics": ["v", "u"],
      "running_cost": "0.5*u**2",
      "t0": 0.0, "tf": 1.0,
      "initial_state": [0, 1], "final_state": [0, -1],
      "svics": [{"expr": "x", "bound": "upper", "limit": "L"}]
    }

``t0``/``tf`` are numbers (fixed) or ``{"lower", "upper", "guess"}``.  The
endpoint cost and ``boundary`` expressions see ``<state>_0``, ``<state>_f``,
``t0`` and ``tf``.  An optional ``"settings"`` object supplies run defaults
(``tol_mesh``, ``tol_constraint``, ``mesh``, ``epsilon``, ``nu``,
``max_mesh``) and ``"units"`` maps variable names to unit strings.
"""

from __future__ import annotations

import ast
import json
import math
import operator
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ProblemDefinitionError
from .model import OcpDefinition, PathConstraint, SvicSpec, TimeSpec
from .problems import BenchmarkProblem

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "tanh": np.tanh,
    "arctan": np.arctan,
    "arcsin": np.arcsin,
    "arccos": np.arccos,
}
CONSTANTS = {"pi": math.pi}
# kinks break the derivative stack and the Newton model
NONSMOOTH = {"abs", "min", "max", "sign", "floor", "ceil", "round", "heaviside"}

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
SETTINGS = {"tol_mesh", "tol_constraint", "mesh", "epsilon", "nu", "max_mesh"}


def compile_expression(text: str, names: dict, where: str = "expression") -> Callable:
    """Compile ``text`` into ``fn(env)`` where ``env`` maps names to values.

    ``names`` maps each allowed identifier to a key of ``env`` or, for
    parameters, to a ``("const", value)`` pair.
    """
    if not isinstance(text, (str, int, float)) or isinstance(text, bool):
        raise ProblemDefinitionError(f"{where}: expected a string or number, got {type(text).__name__}")
    if not isinstance(text, str):
        value = float(text)
        return lambda env: value
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ProblemDefinitionError(f"{where}: cannot parse {text!r}: {exc.msg}") from None
    return _build(tree.body, names, where)


def _build(node, names, where):
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ProblemDefinitionError(f"{where}: only numeric literals are allowed")
        v = float(node.value)
        return lambda env: v
    if isinstance(node, ast.Name):
        key = node.id
        if key in names:
            ref = names[key]
            if isinstance(ref, tuple) and ref[0] == "const":
                v = ref[1]
                return lambda env: v
            return lambda env: env[ref]
        if key in CONSTANTS:
            v = CONSTANTS[key]
            return lambda env: v
        raise ProblemDefinitionError(f"{where}: unknown name {key!r}")
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        op = _BINOPS[type(node.op)]
        a, b = _build(node.left, names, where), _build(node.right, names, where)
        return lambda env: op(a(env), b(env))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        op = _UNARY[type(node.op)]
        a = _build(node.operand, names, where)
        return lambda env: op(a(env))
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name):
            raise ProblemDefinitionError(f"{where}: only plain function calls are allowed")
        fname = node.func.id
        if fname in NONSMOOTH:
            raise ProblemDefinitionError(f"{where}: non-smooth function {fname!r} is not supported")
        if fname not in FUNCTIONS:
            raise ProblemDefinitionError(f"{where}: unknown function {fname!r}; allowed: {sorted(FUNCTIONS)}")
        if node.keywords or len(node.args) != 1:
            raise ProblemDefinitionError(f"{where}: {fname} takes exactly one positional argument")
        fn = FUNCTIONS[fname]
        a = _build(node.args[0], names, where)
        return lambda env: fn(a(env))
    raise ProblemDefinitionError(f"{where}: unsupported syntax {type(node).__name__}")


def _number(v, params, where):
    if v is None:
        return None
    if isinstance(v, str):
        fn = compile_expression(v, {k: ("const", p) for k, p in params.items()}, where)
        return float(fn({}))
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ProblemDefinitionError(f"{where}: expected a number")
    return float(v)


def _time_spec(v, params, where):
    if isinstance(v, dict):
        unknown = set(v) - {"lower", "upper", "guess"}
        if unknown or not {"lower", "upper"} <= set(v):
            raise ProblemDefinitionError(f"{where}: needs 'lower' and 'upper' (optional 'guess')")
        lo, hi = _number(v["lower"], params, where), _number(v["upper"], params, where)
        if lo > hi:
            raise ProblemDefinitionError(f"{where}: lower exceeds upper")
        return TimeSpec.free(lo, hi, _number(v.get("guess"), params, where))
    return TimeSpec.fixed(_number(v, params, where))


def _vector(v, n, params, where):
    if v is None:
        return None
    if not isinstance(v, list) or len(v) != n:
        raise ProblemDefinitionError(f"{where}: expected a list of {n} entries")
    return [_number(x, params, f"{where}[{i}]") for i, x in enumerate(v)]


def _bounds(v, n, params, where):
    if v is None:
        return None
    if not isinstance(v, list) or len(v) != 2:
        raise ProblemDefinitionError(f"{where}: expected [lower, upper]")
    lo = _vector(v[0], n, params, where + ".lower")
    hi = _vector(v[1], n, params, where + ".upper")
    for i, (a, b) in enumerate(zip(lo, hi)):
        if a is not None and b is not None and a > b:
            raise ProblemDefinitionError(f"{where}: lower > upper for entry {i}")
    return lo, hi


def _identifiers(seq, where):
    if not isinstance(seq, list) or not seq:
        raise ProblemDefinitionError(f"{where}: expected a non-empty list of names")
    for s in seq:
        if not isinstance(s, str) or not s.isidentifier():
            raise ProblemDefinitionError(f"{where}: {s!r} is not a valid identifier")
    if len(set(seq)) != len(seq):
        raise ProblemDefinitionError(f"{where}: duplicate names")
    return list(seq)


def _names_yut(states, controls, params, with_control=True):
    names = {k: ("const", v) for k, v in params.items()}
    for i, s in enumerate(states):
        names[s] = ("y", i)
    if with_control:
        for i, s in enumerate(controls):
            names[s] = ("u", i)
    names["t"] = "t"
    return names


def _yut(fn):
    def ev(y, u, t):
        env = {"t": t}
        for i, v in enumerate(y):
            env[("y", i)] = v
        for i, v in enumerate(u):
            env[("u", i)] = v
        return fn(env)
    return ev


def _endpoint_names(states, params):
    names = {k: ("const", v) for k, v in params.items()}
    for i, s in enumerate(states):
        names[f"{s}_0"] = ("y0", i)
        names[f"{s}_f"] = ("yf", i)
    names["t0"] = "t0"
    names["tf"] = "tf"
    return names


def _endpoint(fn):
    def ev(y0, t0, yf, tf):
        env = {"t0": t0, "tf": tf}
        for i, v in enumerate(y0):
            env[("y0", i)] = v
        for i, v in enumerate(yf):
            env[("yf", i)] = v
        return fn(env)
    return ev


_KEYS = {
    "name", "states", "controls", "parameters", "dynamics", "running_cost", "endpoint_cost",
    "t0", "tf", "initial_state", "final_state", "state_bounds", "control_bounds", "svics",
    "path", "boundary", "settings", "units", "description",
}


def problem_from_dict(spec: dict, name: str = "user") -> BenchmarkProblem:
    """Build a problem from an already-parsed JSON object."""
    if not isinstance(spec, dict):
        raise ProblemDefinitionError("problem definition must be a JSON object")
    unknown = set(spec) - _KEYS
    if unknown:
        raise ProblemDefinitionError(f"unknown keys: {sorted(unknown)}")
    for key in ("states", "controls", "dynamics", "t0", "tf"):
        if key not in spec:
            raise ProblemDefinitionError(f"missing required key {key!r}")
    states = _identifiers(spec["states"], "states")
    controls = _identifiers(spec["controls"], "controls")
    params = spec.get("parameters", {}) or {}
    if not isinstance(params, dict):
        raise ProblemDefinitionError("parameters must be an object")
    resolved = {}
    for k, v in params.items():
        if not isinstance(k, str) or not k.isidentifier():
            raise ProblemDefinitionError(f"parameter name {k!r} is not a valid identifier")
        resolved[k] = _number(v, resolved, f"parameters.{k}")
    params = resolved
    clash = (set(states) | set(controls)) & (set(params) | {"t", "t0", "tf"} | set(CONSTANTS) | set(FUNCTIONS))
    if clash:
        raise ProblemDefinitionError(f"names shadow reserved or parameter names: {sorted(clash)}")
    if set(states) & set(controls):
        raise ProblemDefinitionError("a name is used for both a state and a control")
    n_y, n_u = len(states), len(controls)

    yut = _names_yut(states, controls, params)
    dyn = spec["dynamics"]
    if not isinstance(dyn, list) or len(dyn) != n_y:
        raise ProblemDefinitionError(f"dynamics: expected {n_y} expressions")
    dyn_fns = [compile_expression(e, yut, f"dynamics[{i}]") for i, e in enumerate(dyn)]

    def dynamics(y, u, t, _f=[_yut(f) for f in dyn_fns]):
        return [f(y, u, t) for f in _f]

    running = None
    if spec.get("running_cost") is not None:
        running = _yut(compile_expression(spec["running_cost"], yut, "running_cost"))
    ep_names = _endpoint_names(states, params)
    endpoint = None
    if spec.get("endpoint_cost") is not None:
        endpoint = _endpoint(compile_expression(spec["endpoint_cost"], ep_names, "endpoint_cost"))
    if running is None and endpoint is None:
        raise ProblemDefinitionError("need a running_cost, an endpoint_cost or both")

    yt = _names_yut(states, controls, params, with_control=False)
    svics = []
    for i, s in enumerate(spec.get("svics", []) or []):
        where = f"svics[{i}]"
        if not isinstance(s, dict) or not {"expr", "bound", "limit"} <= set(s):
            raise ProblemDefinitionError(f"{where}: needs 'expr', 'bound' and 'limit'")
        if s["bound"] not in ("upper", "lower"):
            raise ProblemDefinitionError(f"{where}: bound must be 'upper' or 'lower'")
        for c in controls:
            if _mentions(s["expr"], c):
                raise ProblemDefinitionError(f"{where}: a state constraint may not depend on control {c!r}")
        fn = compile_expression(s["expr"], yt, where)
        svics.append(SvicSpec(_yt(fn), s["bound"], _number(s["limit"], params, where + ".limit"),
                              name=str(s.get("name", f"c{i}"))))

    path = []
    for i, p in enumerate(spec.get("path", []) or []):
        where = f"path[{i}]"
        if not isinstance(p, dict) or "expr" not in p:
            raise ProblemDefinitionError(f"{where}: needs 'expr' and at least one of 'lower'/'upper'")
        fn = _yut(compile_expression(p["expr"], yut, where))
        lo = _number(p.get("lower"), params, where)
        hi = _number(p.get("upper"), params, where)
        lo = -np.inf if lo is None else lo
        hi = np.inf if hi is None else hi
        if lo > hi:
            raise ProblemDefinitionError(f"{where}: lower > upper")
        path.append(PathConstraint(lambda y, u, t, _f=fn: [_f(y, u, t)], [lo], [hi], name=str(p.get("name", f"p{i}"))))

    boundary_fn = boundary_bounds = None
    bspec = spec.get("boundary", []) or []
    if bspec:
        fns, lo, hi = [], [], []
        for i, b in enumerate(bspec):
            where = f"boundary[{i}]"
            if not isinstance(b, dict) or "expr" not in b:
                raise ProblemDefinitionError(f"{where}: needs 'expr'")
            fns.append(_endpoint(compile_expression(b["expr"], ep_names, where)))
            a = _number(b.get("lower"), params, where)
            c = _number(b.get("upper"), params, where)
            lo.append(-np.inf if a is None else a)
            hi.append(np.inf if c is None else c)

        def boundary_fn(y0, t0, yf, tf, _f=fns):
            return [f(y0, t0, yf, tf) for f in _f]

        boundary_bounds = (lo, hi)

    try:
        ocp = OcpDefinition(
            n_y=n_y,
            n_u=n_u,
            dynamics=dynamics,
            running_cost=running,
            endpoint_cost=endpoint,
            t0=_time_spec(spec["t0"], params, "t0"),
            tf=_time_spec(spec["tf"], params, "tf"),
            initial_state=_vector(spec.get("initial_state"), n_y, params, "initial_state"),
            final_state=_vector(spec.get("final_state"), n_y, params, "final_state"),
            boundary_fn=boundary_fn,
            boundary_bounds=boundary_bounds,
            path=path,
            svics=svics,
            state_bounds=_bounds(spec.get("state_bounds"), n_y, params, "state_bounds"),
            control_bounds=_bounds(spec.get("control_bounds"), n_u, params, "control_bounds"),
            state_names=states,
            control_names=controls,
            name=str(spec.get("name", name)),
        )
    except ValueError as exc:
        raise ProblemDefinitionError(str(exc)) from None
    if ocp.t0.lower >= ocp.tf.upper or ocp.t0.guess >= ocp.tf.guess:
        raise ProblemDefinitionError("t0 must lie before tf")
    settings = spec.get("settings", {}) or {}
    if not isinstance(settings, dict) or set(settings) - SETTINGS:
        raise ProblemDefinitionError(f"settings: allowed keys are {sorted(SETTINGS)}")
    units = spec.get("units", {}) or {}
    if not isinstance(units, dict):
        raise ProblemDefinitionError("units must be an object")
    return BenchmarkProblem(ocp.name, ocp, None, dict(settings), units={str(k): str(v) for k, v in units.items()})


def _mentions(expr, name) -> bool:
    if not isinstance(expr, str):
        return False
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError:
        return False
    return any(isinstance(n, ast.Name) and n.id == name for n in ast.walk(tree))


def _yt(fn):
    def ev(y, t):
        env = {"t": t}
        for i, v in enumerate(y):
            env[("y", i)] = v
        return fn(env)
    return ev


def load_problem(path) -> BenchmarkProblem:
    """Read and compile a JSON problem file."""
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except OSError as exc:
        raise ProblemDefinitionError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ProblemDefinitionError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return problem_from_dict(spec, name=path.stem)
