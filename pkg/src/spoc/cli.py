"""``spoc-solve`` command line.

Exit codes: 0 converged, 1 run error, 2 usage error, 3 iteration limit,
4 NLP solver failure, 5 structure detection failure.  Set ``SPOC_LOG_LEVEL``
(e.g. ``INFO``) for progress logging on stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import shutil
import sys
from dataclasses import asdict
from pathlib import Path

from . import bundle
from .config import load_problem
from .driver import SpocConfig, compare_baseline, solve_baseline, solve_spoc
from .errors import ProblemDefinitionError, SpocError
from .problems import REGISTRY, get_benchmark
from .structure import DetectionConfig

EXIT = {"converged": 0, "max-iterations": 3, "solver-failure": 4, "detection-failure": 5}
PROBLEM_ARGS = {"bryson-denham": {"limit": "limit"}, "rlv-entry": {"qdot_max": "qdot_max"}}


class UsageError(Exception):
    pass


def parse_mesh(text: str) -> tuple:
    m = re.fullmatch(r"\s*(\d+)\s*[xX*]\s*(\d+)\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"mesh must look like '10x4', got {text!r}")
    return int(m.group(1)), int(m.group(2))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spoc-solve", description="State-constrained optimal control by multiple-domain LGR collocation.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="solve a built-in problem or a JSON problem file")
    r.add_argument("problem", help=f"one of {sorted(REGISTRY)} or a path to a .json problem file")
    r.add_argument("--mode", choices=("spoc", "baseline", "compare"), default="spoc")
    r.add_argument("--out", type=Path, default=None, help="bundle directory (default runs/<problem>-<mode>)")
    r.add_argument("--tol-mesh", type=float, default=None)
    r.add_argument("--tol-constraint", type=float, default=None)
    r.add_argument("--detect-eps", type=float, default=None, help="detection tolerance epsilon")
    r.add_argument("--nu", type=float, default=None, help="window widening factor")
    r.add_argument("--max-mesh", type=int, default=None, help="maximum number of mesh iterations")
    r.add_argument("--mesh", type=parse_mesh, default=None, help="initial mesh 'K x N'")
    r.add_argument("--seed", type=int, default=None, help="seed for the control-dependence probes")
    r.add_argument("--limit", type=float, default=None, help="bryson-denham: state limit L")
    r.add_argument("--qdot-max", type=float, default=None, help="rlv-entry: heat-rate limit in W/m^2")
    r.add_argument("--export", action="store_true", help="also write plot series into the bundle")

    e = sub.add_parser("export-plots", help="write CSV series for an existing bundle")
    e.add_argument("bundle", type=Path)
    e.add_argument("--oversample", type=int, default=10)

    sub.add_parser("list", help="list built-in problems")
    return p


def _resolve_problem(args):
    """Return (problem, manifest fields)."""
    name = args.problem
    given = {"limit": args.limit, "qdot_max": args.qdot_max}
    if name in REGISTRY:
        allowed = PROBLEM_ARGS.get(name, {})
        kw = {}
        for k, v in given.items():
            if v is None:
                continue
            if k not in allowed:
                raise UsageError(f"--{k.replace('_', '-')} does not apply to {name}")
            kw[allowed[k]] = v
        try:
            prob = get_benchmark(name, **kw)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        return prob, {"source": "benchmark", "problem": name, "problem_args": kw}
    path = Path(name)
    if path.suffix.lower() != ".json" or not path.is_file():
        raise UsageError(f"unknown problem {name!r}; expected one of {sorted(REGISTRY)} or an existing .json file")
    if any(v is not None for v in given.values()):
        raise UsageError("--limit/--qdot-max apply only to built-in problems")
    try:
        prob = load_problem(path)
    except ProblemDefinitionError as exc:
        raise UsageError(f"{path}: {exc}") from None
    return prob, {"source": "config", "problem": str(path), "problem_args": {}}


def make_config(prob, args) -> SpocConfig:
    """SpocConfig from defaults, the problem's recommended settings and flags."""
    s = dict(prob.config)
    flags = {
        "tol_mesh": args.tol_mesh,
        "tol_constraint": args.tol_constraint,
        "epsilon": args.detect_eps,
        "nu": args.nu,
        "max_mesh": args.max_mesh,
        "mesh": args.mesh,
        "seed": args.seed,
    }
    s.update({k: v for k, v in flags.items() if v is not None})
    base = SpocConfig()
    try:
        det = DetectionConfig(s.get("epsilon", base.detection.epsilon), s.get("nu", base.detection.nu))
        return SpocConfig(
            tol_mesh=float(s.get("tol_mesh", base.tol_mesh)),
            tol_constraint=float(s.get("tol_constraint", base.tol_constraint)),
            detection=det,
            max_mesh=int(s.get("max_mesh", base.max_mesh)),
            mesh=tuple(int(v) for v in s.get("mesh", base.mesh)),
            seed=int(s.get("seed", base.seed)),
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid settings: {exc}") from None


def settings_of(cfg: SpocConfig) -> dict:
    return {
        "tol_mesh": cfg.tol_mesh,
        "tol_constraint": cfg.tol_constraint,
        "epsilon": cfg.detection.epsilon,
        "nu": cfg.detection.nu,
        "max_mesh": cfg.max_mesh,
        "mesh": list(cfg.mesh),
        "seed": cfg.seed,
        "q_max": cfg.q_max,
        "oversample": cfg.oversample,
        "refine": asdict(cfg.refine),
        "solver": {k: v for k, v in asdict(cfg.solver).items() if k != "backend"},
    }


def _row(run, analytic):
    s = run.summary()
    row = {
        "mode": s["mode"],
        "reason": s["reason"],
        "cost": s["cost"],
        "delta_c": s["delta_c"],
        "e_max": s["e_max"],
        "t_s": s["switch_times"],
        "mesh_it": s["mesh_iterations"],
        "nlp_it": sum(r.nlp_iterations for r in run.iterations),
        "wall_s": s["wall_time"],
    }
    if analytic is not None:
        row["cost_err"] = abs(run.cost - analytic.cost) / abs(analytic.cost)
    return row


def format_table(rows) -> str:
    keys = list(rows[0])
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]

    def fmt(v):
        if isinstance(v, float):
            return f"{v:.10g}" if abs(v) >= 1e-3 or v == 0 else f"{v:.3e}"
        if isinstance(v, list):
            return "[" + ", ".join(f"{x:.6g}" for x in v) + "]"
        return "" if v is None else str(v)

    cells = [[fmt(r.get(k)) for k in keys] for r in rows]
    widths = [max(len(k), *(len(c[i]) for c in cells)) for i, k in enumerate(keys)]
    lines = ["  ".join(k.rjust(w) for k, w in zip(keys, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def headline(prob, run) -> dict:
    """Problem-specific headline values, e.g. the entry crossrange in deg."""
    if run.final.trajectory is None:
        return {}
    yf = run.final.trajectory.segments[-1].y[-1]
    return {name: {"value": fn(yf), "unit": unit} for name, (fn, unit) in prob.report.items()}


def _final_state_line(prob, run) -> str:
    if run.final.trajectory is None:
        return ""
    y = run.final.trajectory.segments[-1].y[-1]
    parts = [f"{n}={v:.10g}" for n, v in zip(prob.ocp.state_names, y)]
    parts += [f"{k}={v['value']:.10g} {v['unit']}" for k, v in headline(prob, run).items()]
    return f"final ({run.mode}): " + ", ".join(parts)


def cmd_run(args) -> int:
    prob, source = _resolve_problem(args)
    cfg = make_config(prob, args)
    out = args.out or Path("runs") / f"{Path(args.problem).stem}-{args.mode}"
    try:
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise OSError("not writable")
    except OSError as exc:
        raise UsageError(f"output directory {out}: {exc}") from None
    manifest = dict(source, mode=args.mode, settings=settings_of(cfg))
    if source["source"] == "config":
        shutil.copyfile(source["problem"], out / "problem.json")

    analytic = prob.analytic
    if args.mode == "compare":
        cmp = compare_baseline(prob.ocp, cfg, analytic)
        runs = [cmp.spoc, cmp.baseline]
        for r, sub in zip(runs, ("spoc", "baseline")):
            if source["source"] == "config":
                (out / sub).mkdir(parents=True, exist_ok=True)
                shutil.copyfile(source["problem"], out / sub / "problem.json")
            bundle.write_run(r, out / sub, dict(manifest, mode=sub), headline(prob, r))
        bundle.write_json(out / "manifest.json", manifest)
        bundle.write_json(out / "comparison.json",
                          {"rows": [{k: v for k, v in row.items() if k != "wall_time"} for row in cmp.rows]})
    else:
        solver = solve_spoc if args.mode == "spoc" else solve_baseline
        runs = [solver(prob.ocp, cfg)]
        bundle.write_run(runs[0], out, manifest, headline(prob, runs[0]))

    print(f"problem: {prob.name}   bundle: {out}")
    print(format_table([_row(r, analytic) for r in runs]))
    for r in runs:
        line = _final_state_line(prob, r)
        if line:
            print(line)
    if args.export:
        for d in bundle.bundle_runs(out):
            bundle.export_run(d, prob)
    codes = [EXIT[r.reason] for r in runs]
    return next((c for c in codes if c), 0)


def cmd_export(args) -> int:
    try:
        runs = bundle.bundle_runs(args.bundle)
        m = bundle.manifest_of(args.bundle)
        prob = bundle.problem_of(runs[0], m)
        files = []
        for d in runs:
            files += bundle.export_run(d, prob, args.oversample)
    except (bundle.BundleError, KeyError, ProblemDefinitionError) as exc:
        print(f"spoc-solve: incomplete bundle: {exc}", file=sys.stderr)
        return 1
    for f in files:
        print(f)
    return 0


def main(argv=None) -> int:
    level = os.environ.get("SPOC_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "list":
            for name in sorted(REGISTRY):
                print(name)
            return 0
        if args.command == "export-plots":
            return cmd_export(args)
        return cmd_run(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"spoc-solve: error: {exc}", file=sys.stderr)
        return 2
    except SpocError as exc:
        print(f"spoc-solve: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
