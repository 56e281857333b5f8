"""Command-line entry point: ``roundabout-cav {validate,run,sweep,report}``."""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .errors import InfeasibleEntryError, InfeasibleScheduleError, RoundaboutError
from .scenario_io import (
    ScenarioError,
    export_results,
    load_scenario,
    metrics_document,
    write_manifest,
    write_plot_data,
)
from .simulator import compute_metrics, run

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INVARIANT = 3
EXIT_INFEASIBLE = 4
EXIT_IO = 5

log = logging.getLogger("roundabout_cav")


def _scenario_error_code(exc: ScenarioError) -> int:
    return EXIT_PARSE if exc.is_parse_error else EXIT_INVARIANT


def _load(path, overrides, seed):
    overrides = list(overrides or [])
    if seed is not None:
        overrides.append(f"sim.seed={seed}")
    return load_scenario(path, overrides)


def cmd_validate(scenario_path, overrides=(), seed=None) -> int:
    try:
        spec = _load(scenario_path, overrides, seed)
    except ScenarioError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return _scenario_error_code(exc)
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"ok: {len(spec.geoms)} paths, {len(spec.arrivals)} arrivals")
    return EXIT_OK


def _summary_table(metrics) -> str:
    lines = [
        f"{'v_min [m/s]':>12} {'v_avg [m/s]':>12} {'Travel Time RMSE':>17} {'violations':>10}",
        f"{metrics.v_min_overall:12.4f} {metrics.v_avg_overall:12.4f} "
        f"{metrics.exit_time_rmse_pct:16.3f}% {metrics.violation_count:10d}",
    ]
    return "\n".join(lines)


def _run_once(scenario_path, out_dir, overrides, seed, quiet=False):
    """Run one scenario and export it; returns (exit code, metrics document or None)."""
    try:
        spec = _load(scenario_path, overrides, seed)
    except ScenarioError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return _scenario_error_code(exc), None
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO, None
    try:
        result = run(spec)
    except InfeasibleScheduleError as exc:
        print(f"infeasible: arrival {exc.vehicle_id}: {exc}", file=sys.stderr)
        for v in exc.blocking:
            print(f"  blocking {v.describe()}", file=sys.stderr)
        return EXIT_INFEASIBLE, None
    except InfeasibleEntryError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE, None
    metrics = compute_metrics(result) if result.schedule else None
    try:
        written = export_results(result, metrics, out_dir)
        write_manifest(written, out_dir)
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO, None
    if not quiet:
        if metrics is not None:
            print(_summary_table(metrics))
        else:
            print("no arrivals; wrote empty outputs")
        print(f"wrote {len(written)} files to {out_dir}")
    return EXIT_OK, metrics_document(metrics, result)


def cmd_run(scenario_path, out_dir, overrides=(), seed=None) -> int:
    return _run_once(scenario_path, out_dir, overrides, seed)[0]


def _parse_ranges(params) -> list:
    axes = []
    for item in params or []:
        if "=" not in item:
            raise ScenarioError("syntax", f"sweep parameter {item!r} is not key=v1,v2,...", "--param")
        key, values = item.split("=", 1)
        axes.append([f"{key}={v}" for v in values.split(",") if v != ""])
    return axes


def _sweep_point(args):
    scenario_path, point_dir, overrides, seed = args
    code, doc = _run_once(scenario_path, point_dir, overrides, seed, quiet=True)
    return code, doc


def cmd_sweep(scenario_path, out_dir, params=(), overrides=(), seed=None, jobs=1) -> int:
    try:
        axes = _parse_ranges(params)
    except ScenarioError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_PARSE
    points = [list(combo) for combo in itertools.product(*axes)] if axes else [[]]
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    tasks = [(scenario_path, str(out / f"point_{i:03d}"), list(overrides) + combo, seed)
             for i, combo in enumerate(points)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]

    index = []
    worst = EXIT_OK
    for (_, point_dir, _, _), combo, (code, doc) in zip(tasks, points, results):
        index.append({"dir": Path(point_dir).name, "overrides": combo, "exit_code": code,
                      "metrics": doc})
        worst = max(worst, code)
    (out / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    failed = sum(1 for entry in index if entry["exit_code"] != EXIT_OK)
    print(f"sweep: {len(index)} points, {failed} failed; index at {out / 'index.json'}")
    return worst


def cmd_report(result_dir) -> int:
    try:
        written = write_plot_data(result_dir, Path(result_dir) / "report")
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_IO
    except ScenarioError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return _scenario_error_code(exc)
    for path in written:
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roundabout-cav", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_args(p):
        p.add_argument("--scenario", required=True, help="scenario YAML/JSON file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a scenario field, e.g. params.t_h=2")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("validate", help="parse and validate a scenario")
    scenario_args(p)

    p = sub.add_parser("run", help="schedule, simulate and export a scenario")
    scenario_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="Cartesian sweep over scenario overrides")
    scenario_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--param", action="append", default=[], metavar="KEY=V1,V2,...")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("report", help="regenerate plot data from an exported run")
    p.add_argument("--out", required=True, help="result directory written by 'run'")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            return cmd_validate(args.scenario, args.overrides, args.seed)
        if args.command == "run":
            return cmd_run(args.scenario, args.out, args.overrides, args.seed)
        if args.command == "sweep":
            return cmd_sweep(args.scenario, args.out, args.param, args.overrides, args.seed,
                             args.jobs)
        return cmd_report(args.out)
    except RoundaboutError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
