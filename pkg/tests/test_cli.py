import csv
import json
from pathlib import Path

import numpy as np
import pytest

from spoc.cli import main, parse_mesh

ROOT = Path(__file__).resolve().parents[1]


def read_series(path):
    lines = Path(path).read_text().splitlines()
    flag = lines[0]
    rows = list(csv.reader(lines[1:]))
    header, units, data = rows[0], rows[1], rows[2:]
    cols = {h: np.array([float(r[i]) if r[i] not in ("", "nan") else np.nan for r in data]) for i, h in enumerate(header)
            if h not in ("tag", "status", "event")}
    return flag, header, units, data, cols


@pytest.fixture(scope="module")
def bd_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("bd") / "run"
    assert main(["run", "bryson-denham", "--out", str(out), "--export"]) == 0
    return out


def test_run_writes_bundle(bd_bundle):
    for name in ("manifest.json", "summary.json", "timing.json", "series/trajectory.csv",
                 "series/history.csv", "series/markers.csv", "iterations/M00.json"):
        assert (bd_bundle / name).exists(), name
    s = json.loads((bd_bundle / "summary.json").read_text())
    assert s["converged"] is True and s["reason"] == "converged"
    assert abs(s["cost"] - 32 / 9) <= 1e-8 * 32 / 9
    assert "wall_time" not in s
    m = json.loads((bd_bundle / "manifest.json").read_text())
    assert m["mode"] == "spoc" and m["settings"]["tol_mesh"] == 1e-6


def test_trajectory_series(bd_bundle):
    flag, header, units, _, cols = read_series(bd_bundle / "series" / "trajectory.csv")
    assert flag.startswith("# problem=bryson-denham") and "converged=true" in flag
    assert header == ["t", "x", "v", "u", "svic_x"]
    assert len(units) == len(header)
    t = cols["t"]
    assert np.all(np.diff(t) > 0) and t[0] == 0.0 and t[-1] == 1.0
    # the state rides the limit on the middle arc
    mid = (t > 0.376) & (t < 0.624)
    assert mid.sum() > 10
    assert np.max(np.abs(cols["x"][mid] - 0.125)) <= 1e-6
    assert np.max(cols["x"]) <= 0.125 + 1e-8


def test_markers_and_history(bd_bundle):
    _, _, _, data, cols = read_series(bd_bundle / "series" / "markers.csv")
    assert [r[0] for r in data] == ["activation", "deactivation"]
    np.testing.assert_allclose(cols["t"], [0.375, 0.625], atol=1e-4)
    _, header, _, data, cols = read_series(bd_bundle / "series" / "history.csv")
    assert header[:3] == ["M", "tag", "status"]
    assert data[0][1] == "initial"
    assert np.all(np.diff(cols["n_colloc"]) >= 0)


def test_summary_is_byte_identical_on_rerun(bd_bundle, tmp_path):
    out = tmp_path / "again"
    assert main(["run", "bryson-denham", "--out", str(out)]) == 0
    assert (out / "summary.json").read_bytes() == (bd_bundle / "summary.json").read_bytes()
    for f in sorted((bd_bundle / "iterations").glob("*.json")):
        assert (out / "iterations" / f.name).read_bytes() == f.read_bytes()


def test_export_plots_command(bd_bundle, tmp_path, capsys):
    assert main(["export-plots", str(bd_bundle), "--oversample", "4"]) == 0
    printed = capsys.readouterr().out.split()
    assert any(p.endswith("trajectory.csv") for p in printed)
    assert main(["export-plots", str(tmp_path)]) == 1


def test_unconverged_run_is_flagged(tmp_path):
    out = tmp_path / "short"
    code = main(["run", "bryson-denham", "--out", str(out), "--max-mesh", "1", "--tol-mesh", "1e-13", "--export"])
    assert code == 3
    s = json.loads((out / "summary.json").read_text())
    assert s["converged"] is False and s["reason"] == "max-iterations"
    assert "converged=false" in (out / "series" / "trajectory.csv").read_text().splitlines()[0]


def test_compare_mode(tmp_path, capsys):
    out = tmp_path / "cmp"
    assert main(["run", "bryson-denham", "--mode", "compare", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "baseline" in text and "spoc" in text
    rows = json.loads((out / "comparison.json").read_text())["rows"]
    assert rows[1]["cost_error"] >= 10 * rows[0]["cost_error"]
    assert (out / "spoc" / "summary.json").exists() and (out / "baseline" / "summary.json").exists()


def test_json_problem_file(tmp_path):
    out = tmp_path / "user"
    assert main(["run", str(ROOT / "problems" / "bryson_denham.json"), "--out", str(out), "--export"]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert abs(s["cost"] - 32 / 9) <= 1e-8
    assert (out / "problem.json").exists()
    # a config bundle re-exports from its own copy of the problem
    assert main(["export-plots", str(out)]) == 0


def test_list(capsys):
    assert main(["list"]) == 0
    names = capsys.readouterr().out.split()
    assert "bryson-denham" in names and "rlv-entry" in names


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "no-such-problem"],
        ["run", "bryson-denham", "--qdot-max", "1e6"],
        ["run", "bryson-denham", "--limit", "0.4"],
        ["run", "bryson-denham", "--tol-mesh", "-1"],
    ],
)
def test_usage_errors(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path / "x")]) == 2
    assert "error" in capsys.readouterr().err


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["run", "bryson-denham", "--mesh", "ten"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main([])


def test_bad_json_problem_is_a_usage_error(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"states": ["x"], "controls": ["u"], "dynamics": ["abs(u)"], "running_cost": "u**2",
                             "t0": 0, "tf": 1}))
    code = main(["run", str(p), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "non-smooth" in capsys.readouterr().err


def test_parse_mesh():
    assert parse_mesh("10x4") == (10, 4)
    assert parse_mesh("3 x 6") == (3, 6)
