"""One subcommand per figure kind; exit 0 on success, 2 on bad input, 3 otherwise."""

from __future__ import annotations

import argparse
import sys

from .figures import FigureSpec, PlotkitError, render


def _common(parser):
    parser.add_argument("--input", required=True, help="artifact file to visualize")
    parser.add_argument("--output", required=True, help="image path to write")
    parser.add_argument("--title", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plotkit", description="Render figures from softprune run artifacts"
    )
    sub = parser.add_subparsers(dest="kind", required=True)

    p = sub.add_parser("curves", help="accuracy-over-tasks curves from run_summary.json")
    _common(p)

    p = sub.add_parser("sweep", help="lambda-sweep bars from sweep.csv")
    _common(p)

    p = sub.add_parser("histograms", help="importance-density overlay from histograms.csv")
    _common(p)
    p.add_argument("--task", type=int, default=1)
    p.add_argument("--layer", default="pooled")

    p = sub.add_parser("heatmap", help="change/importance heat maps from a change_map CSV")
    _common(p)
    p.add_argument("--layer", default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    labels = {}
    if args.title:
        labels["title"] = args.title
    if getattr(args, "task", None) is not None:
        labels["task"] = args.task
    if getattr(args, "layer", None) is not None:
        labels["layer"] = args.layer
    spec = FigureSpec(kind=args.kind, inputs=[args.input], output=args.output, labels=labels)
    try:
        path = render(spec)
    except PlotkitError as e:
        print(f"input error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
