"""Command-line entry points: run, sweep, analyze, report.

Exit codes: 0 success, 2 validation error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import SWEEP_GRID, validate_config
from .errors import ConfigValidationError
from .runner import analyze_run, run_sequence, sweep

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _fmt_pct(value) -> str:
    return "/" if value is None else f"{100.0 * value:7.2f}"


def _fmt_smt(value) -> str:
    return "/" if value is None else f"{value:.6f}"


def _print_report(summary: dict) -> None:
    print(f"run: {summary.get('name', '?')}  (config {summary.get('config_hash', '?')})")
    print(f"tasks: {summary.get('task_count')}   reference: {summary.get('reference_source')}")
    header = f"{'strategy':<10} {'head':<7} {'ACC%':>8} {'FWT%':>8} {'BWT%':>8} {'SMT':>10}"
    print(header)
    print("-" * len(header))
    for name, entry in summary["strategies"].items():
        if entry.get("error"):
            print(f"{name:<10} FAILED: {entry['error']}")
            continue
        m = entry["metrics"]
        print(
            f"{name:<10} {entry.get('head_mode', ''):<7} {_fmt_pct(m.get('ACC')):>8} "
            f"{_fmt_pct(m.get('FWT')):>8} {_fmt_pct(m.get('BWT')):>8} {_fmt_smt(m.get('SMT')):>10}"
        )


def cmd_run(args) -> int:
    cfg = validate_config(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    record = run_sequence(cfg)
    with open(os.path.join(record.output_dir, "run_summary.json")) as f:
        _print_report(json.load(f))
    failed = [n for n, o in record.outcomes.items() if o.error]
    if failed:
        print(f"failed strategies: {', '.join(failed)}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = validate_config(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    grid = [float(v) for v in args.grid.split(",")] if args.grid else list(SWEEP_GRID)
    doc = sweep(cfg, grid, strategy=args.strategy)
    print(f"{'strategy':<10} {'lambda':>8} {'ACC%':>8}")
    for row in doc["results"]:
        lam = "-" if row["lambda"] is None else f"{row['lambda']:g}"
        print(f"{row['strategy']:<10} {lam:>8} {100 * row['ACC']:8.2f}")
    print(f"best lambda: {doc['best_lambda']:g}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    if not os.path.exists(os.path.join(args.run_dir, "run_summary.json")):
        raise ConfigValidationError([f"no run_summary.json under {args.run_dir}"])
    outdir = analyze_run(args.run_dir, bins=args.bins)
    print(f"analysis tables written to {outdir}")
    return EXIT_OK


def cmd_report(args) -> int:
    path = os.path.join(args.run_dir, "run_summary.json")
    if not os.path.exists(path):
        raise ConfigValidationError([f"no run_summary.json under {args.run_dir}"])
    with open(path) as f:
        _print_report(json.load(f))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softprune",
        description="Continual-learning experiments with soft parameter pruning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every strategy in a config through its task sequence")
    p.add_argument("config")
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="greedy lambda search on a carved validation split")
    p.add_argument("config")
    p.add_argument("--grid", default=None, help="comma-separated lambda values")
    p.add_argument("--strategy", default="spp")
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="emit analysis CSVs from a finished run's artifacts")
    p.add_argument("run_dir")
    p.add_argument("--bins", type=int, default=100)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="print the metric summary table of a finished run")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigValidationError as e:
        for err in e.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
