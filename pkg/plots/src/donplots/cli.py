"""Command line for the figure renderer:

    render --summary <json> --diagnostics <csv> [--heat <csv>] --out <dir>
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .render import PlotJob, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="render", description="Render figures from donflow run artifacts."
    )
    parser.add_argument("--summary", required=True, help="summary.json path")
    parser.add_argument("--diagnostics", required=True, help="diagnostics.csv path")
    parser.add_argument("--heat", default=None, help="optional heat.csv path")
    parser.add_argument("--out", required=True, help="output directory for figures")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for label, path in (("summary", args.summary), ("diagnostics", args.diagnostics)):
        if not Path(path).exists():
            print(f"error: {label} file {path} does not exist", file=sys.stderr)
            return 2
    if args.heat is not None and not Path(args.heat).exists():
        print(f"error: heat file {args.heat} does not exist", file=sys.stderr)
        return 2
    job = PlotJob(
        summary_path=Path(args.summary),
        diagnostics_path=Path(args.diagnostics),
        heat_path=Path(args.heat) if args.heat else None,
        out_dir=Path(args.out),
    )
    try:
        manifest = render(job)
    except SchemaError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
