"""Run bundles on disk and plot-ready series exported from them.

Layout of a single-run bundle::

    manifest.json          problem id/arguments, mode and full settings
    problem.json           copy of a user problem file (config runs only)
    summary.json           final numbers and per-iteration history
    timing.json            wall times (kept apart so summaries are reproducible)
    iterations/M00.json    mesh, trajectory, error and detection reports

A ``compare`` bundle holds ``spoc/`` and ``baseline/`` run bundles plus
``comparison.json``.  :func:`export_plots` adds a ``series/`` directory.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .driver import SpocRun
from .model import Segment, Trajectory
from .problems import BenchmarkProblem


class BundleError(Exception):
    """The bundle directory is missing files or cannot be read."""


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n")


def read_json(path: Path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise BundleError(f"missing {path}") from None
    except json.JSONDecodeError as exc:
        raise BundleError(f"{path}: invalid JSON ({exc.msg})") from None


def trajectory_to_dict(traj: Trajectory) -> dict:
    return {
        "interfaces": list(map(float, traj.interfaces)),
        "segments": [
            {"domain": s.domain, "t": s.t.tolist(), "y": s.y.tolist(), "u": s.u.tolist()}
            for s in traj.segments
        ],
    }


def trajectory_from_dict(d: dict) -> Trajectory:
    segs = [
        Segment(np.array(s["t"], float), np.array(s["y"], float), np.array(s["u"], float), int(s["domain"]))
        for s in d["segments"]
    ]
    return Trajectory(segs, [float(v) for v in d["interfaces"]])


def _strip_timing(summary: dict) -> dict:
    s = dict(summary)
    s.pop("wall_time", None)
    s["history"] = [{k: v for k, v in h.items() if k != "wall_time"} for h in s.get("history", [])]
    return s


def write_run(run: SpocRun, out: Path, manifest: dict, report: Optional[dict] = None) -> Path:
    """Write a single-run bundle to ``out`` and return it.

    ``report`` holds problem-specific headline values added to the summary.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "manifest.json", manifest)
    for rec in run.iterations:
        write_json(
            out / "iterations" / f"M{rec.index:02d}.json",
            {
                "M": rec.index,
                "tag": rec.tag,
                "status": rec.status,
                "objective": rec.objective,
                "nlp_iterations": rec.nlp_iterations,
                "mesh": rec.mesh.describe(),
                "trajectory": None if rec.trajectory is None else trajectory_to_dict(rec.trajectory),
                "errors": None if rec.errors is None else rec.errors.to_dict(),
                "detection": None if rec.detection is None else rec.detection.to_dict(),
            },
        )
    summary = run.summary()
    summary["converged"] = run.converged
    if report:
        summary["report"] = report
    summary["reported_file"] = f"iterations/M{run.final.index:02d}.json"
    write_json(out / "summary.json", _strip_timing(summary))
    write_json(
        out / "timing.json",
        {"wall_time": run.wall_time, "iterations": [r.wall_time for r in run.iterations]},
    )
    return out


# ---------------------------------------------------------------------------
# series export


def _load_run(path: Path):
    summary = read_json(path / "summary.json")
    rec_file = path / summary.get("reported_file", "")
    if not summary.get("reported_file") or not rec_file.is_file():
        raise BundleError(f"{path}: reported iteration file is missing")
    rec = read_json(rec_file)
    if rec.get("trajectory") is None:
        raise BundleError(f"{rec_file}: no trajectory stored")
    return summary, rec


def _unit(problem: BenchmarkProblem, name: str) -> str:
    return problem.units.get(name, "-")


def _write_csv(path: Path, flag: str, header: list, units: list, rows) -> None:
    with path.open("w", newline="") as fh:
        fh.write(flag + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerow(units)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def export_run(path: Path, problem: BenchmarkProblem, oversample: int = 10) -> list:
    """Write ``series/`` files for one run bundle; returns the paths."""
    path = Path(path)
    summary, rec = _load_run(path)
    ocp = problem.ocp
    traj = trajectory_from_dict(rec["trajectory"])
    flag = (
        f"# problem={summary.get('problem')} mode={summary.get('mode')} "
        f"reason={summary.get('reason')} converged={str(bool(summary.get('converged'))).lower()}"
    )
    out = path / "series"
    out.mkdir(exist_ok=True)
    t, Y, U = traj.dense(oversample)
    keep = np.concatenate([[True], np.diff(t) > 0])
    t, Y, U = t[keep], Y[keep], U[keep]
    cols = [Y[:, i] for i in range(ocp.n_y)]
    header = ["t"] + list(ocp.state_names) + list(ocp.control_names)
    units = [_unit(problem, n) for n in header]
    data = [t] + cols + [U[:, i] for i in range(ocp.n_u)]
    for s in ocp.svics:
        header.append(f"svic_{s.name}")
        units.append(_unit(problem, s.name))
        data.append(np.broadcast_to(np.asarray(s.value(cols, t), float), t.shape))
    for name, (fn, unit) in problem.outputs.items():
        header.append(name)
        units.append(unit)
        data.append(np.asarray(fn(Y, t), float))
    files = []
    p = out / "trajectory.csv"
    _write_csv(p, flag, header, units, zip(*data))
    files.append(p)

    p = out / "history.csv"
    rows = [
        (h["M"], h["tag"], h["status"], h["objective"], h["e_max"], h["delta_c"], h["n_colloc"])
        for h in summary["history"]
    ]
    rows = [tuple("" if v is None else v for v in r) for r in rows]
    _write_csv(p, flag, ["M", "tag", "status", "objective", "e_max", "delta_c", "n_colloc"],
               ["-", "-", "-", "-", "-", "-", "-"], rows)
    files.append(p)

    p = out / "markers.csv"
    doms = rec["mesh"]["domains"]
    marks = []
    for d, ts in enumerate(traj.interfaces[1:-1]):
        kind = "activation" if doms[d + 1]["kind"] == "constrained" else "deactivation"
        marks.append((kind, ts))
    _write_csv(p, flag, ["event", "t"], ["-", _unit(problem, "t")], marks)
    files.append(p)
    return files


def bundle_runs(path: Path) -> list:
    """Run directories inside a bundle (itself, or the arms of a comparison)."""
    path = Path(path)
    if (path / "comparison.json").is_file():
        return [path / "spoc", path / "baseline"]
    if (path / "summary.json").is_file():
        return [path]
    raise BundleError(f"{path}: not a run bundle (no summary.json)")


def manifest_of(path: Path) -> dict:
    return read_json(Path(path) / "manifest.json")


def problem_of(path: Path, manifest: Optional[dict] = None) -> BenchmarkProblem:
    """Rebuild the problem recorded in a bundle manifest."""
    from .config import load_problem
    from .problems import get_benchmark

    path = Path(path)
    m = manifest or manifest_of(path)
    if m.get("source") == "config":
        return load_problem(path / "problem.json")
    return get_benchmark(m["problem"], **m.get("problem_args", {}))
