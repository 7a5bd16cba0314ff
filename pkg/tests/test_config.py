import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spoc.config import compile_expression, load_problem, problem_from_dict
from spoc.errors import ProblemDefinitionError

BD = {
    "name": "bd",
    "states": ["x", "v"],
    "controls": ["u"],
    "parameters": {"L": 0.125},
    "dynamics": ["v", "u"],
    "running_cost": "0.5*u**2",
    "t0": 0.0,
    "tf": 1.0,
    "initial_state": [0, 1],
    "final_state": [0, -1],
    "svics": [{"expr": "x", "bound": "upper", "limit": "L"}],
}


def env_names():
    return {"a": "a", "b": "b", "k": ("const", 2.0)}


@pytest.mark.parametrize(
    "text,want",
    [
        ("a + b*k", 1.5 + 2.0 * 2.0),
        ("-a**2 / (1 + b)", -(1.5**2) / 3.0),
        ("sin(a)*cos(b) + exp(-a) + log(b) + sqrt(b)", np.sin(1.5) * np.cos(2) + np.exp(-1.5) + np.log(2) + np.sqrt(2)),
        ("arctan(a) + tanh(b) - pi", np.arctan(1.5) + np.tanh(2) - np.pi),
        ("3", 3.0),
    ],
)
def test_compile_expression_values(text, want):
    fn = compile_expression(text, env_names())
    assert fn({"a": 1.5, "b": 2.0}) == pytest.approx(want, rel=1e-15)


@pytest.mark.parametrize(
    "text",
    [
        "abs(a)",
        "max(a, b)",
        "min(a, b)",
        "__import__('os')",
        "a.real",
        "a if b else k",
        "lambda: 1",
        "[a]",
        "a < b",
        "'s'",
        "exp(a, b)",
        "zeta(a)",
        "q + 1",
        "sin(x=a)",
        "a +",
    ],
)
def test_compile_expression_rejects(text):
    with pytest.raises(ProblemDefinitionError):
        compile_expression(text, env_names())


@settings(max_examples=40)
@given(st.floats(-10, 10), st.floats(0.1, 10))
def test_compiled_matches_python(a, b):
    fn = compile_expression("a*b - a/b + b**3", {"a": "a", "b": "b"})
    assert fn({"a": a, "b": b}) == pytest.approx(a * b - a / b + b**3, rel=1e-12, abs=1e-12)


def test_problem_from_dict_matches_builtin():
    from spoc.problems import bryson_denham

    user = problem_from_dict(BD).ocp
    ref = bryson_denham().ocp
    y = [np.array([0.1, 0.2]), np.array([0.5, -0.3])]
    u = [np.array([1.0, 2.0])]
    t = np.array([0.0, 0.5])
    for a, b in zip(user.dynamics(y, u, t), ref.dynamics(y, u, t)):
        np.testing.assert_allclose(a, b)
    np.testing.assert_allclose(user.running_cost(y, u, t), ref.running_cost(y, u, t))
    assert user.svics[0].limit == 0.125
    assert user.derivative_stack(0).order == 2


def test_endpoint_boundary_and_free_time(tmp_path):
    spec = {
        "states": ["h", "v"],
        "controls": ["a"],
        "dynamics": ["v", "a - 1"],
        "endpoint_cost": "tf",
        "running_cost": "0.01*a**2",
        "t0": 0,
        "tf": {"lower": 0.5, "upper": 10, "guess": 2},
        "initial_state": [0, 0],
        "boundary": [{"expr": "h_f - 1", "lower": 0, "upper": 0}],
        "control_bounds": [[-2], [2]],
        "path": [{"expr": "v + a", "upper": 3}],
        "units": {"h": "m"},
    }
    p = tmp_path / "p.json"
    p.write_text(json.dumps(spec))
    bp = load_problem(p)
    ocp = bp.ocp
    assert ocp.tf.guess == 2 and not ocp.tf.is_fixed
    assert ocp.boundary_fn([0, 0], 0.0, [1.5, 0], 3.0) == [0.5]
    assert ocp.endpoint_cost([0, 0], 0.0, [1, 0], 3.0) == 3.0
    assert ocp.path[0].fn([1.0, 2.0], [0.5], 0.0) == [2.5]
    assert bp.units["h"] == "m"
    assert ocp.name == "p"


@pytest.mark.parametrize(
    "change,match",
    [
        ({"dynamics": ["v"]}, "dynamics"),
        ({"states": ["x", "x"]}, "duplicate"),
        ({"states": ["x", "t"]}, "shadow"),
        ({"svics": [{"expr": "x + u", "bound": "upper", "limit": 1}]}, "control"),
        ({"svics": [{"expr": "x", "bound": "sideways", "limit": 1}]}, "bound"),
        ({"running_cost": "abs(u)"}, "non-smooth"),
        ({"running_cost": None}, "running_cost"),
        ({"foo": 1}, "unknown keys"),
        ({"tf": {"lower": 2, "upper": 1}}, "lower"),
        ({"state_bounds": [[0, 0], [-1, 1]]}, "lower > upper"),
        ({"settings": {"bogus": 1}}, "settings"),
        ({"parameters": {"L": "abs(1)"}}, "non-smooth"),
        ({"tf": 0.0}, "before"),
    ],
)
def test_problem_errors(change, match):
    spec = dict(BD, **change)
    with pytest.raises(ProblemDefinitionError, match=match):
        problem_from_dict(spec)


def test_missing_keys_and_bad_json(tmp_path):
    spec = dict(BD)
    del spec["dynamics"]
    with pytest.raises(ProblemDefinitionError, match="dynamics"):
        problem_from_dict(spec)
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ProblemDefinitionError, match="invalid JSON"):
        load_problem(p)
    with pytest.raises(ProblemDefinitionError, match="cannot read"):
        load_problem(tmp_path / "missing.json")
