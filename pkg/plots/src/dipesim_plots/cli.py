"""plot <kind> --in <csv> --out <file>

Renders one figure from a dipesim harness CSV.  Kinds: variance, error,
checks, netsim.  The fitted slope (variance/error) or summary counts are
printed to stdout.
"""

from __future__ import annotations

import argparse
import sys

from .figures import KINDS, PlotInputError, PlotSpec, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plot", description=__doc__)
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--in", dest="source", required=True, help="input CSV path")
    parser.add_argument("--out", required=True, help="output image path (.svg/.png)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        summary = render(PlotSpec(kind=args.kind, source=args.source, out=args.out))
    except (PlotInputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{args.kind}: {summary}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
