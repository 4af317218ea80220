"""plotkit command line: render convergence figures from CSV series.

    plotkit --layout RxC --out fig.png file1.csv file2.csv ...

Exit codes: 0 success, 1 bad arguments or malformed/schema-violating input.
"""

from __future__ import annotations

import argparse
import sys

from .figures import plot_convergence
from .series import SchemaError, read_series


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _parse_layout(text):
    rows, _, cols = text.lower().partition("x")
    try:
        return int(rows), int(cols)
    except ValueError as exc:
        raise CliError(f"bad layout {text!r}; expected RxC") from exc


def main(argv=None) -> int:
    parser = _Parser(prog="plotkit", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("files", nargs="*", help="series CSV files")
    parser.add_argument("--layout", default=None, metavar="RxC")
    parser.add_argument("--out", default="figure.png")
    parser.add_argument("--linear-y", action="store_true",
                        help="linear y axis (log scale is the default)")
    try:
        args = parser.parse_args(argv)
        if not args.files:
            raise CliError("no input files")
        layout = _parse_layout(args.layout) if args.layout else None
        series = [read_series(path) for path in args.files]
        written = plot_convergence(
            series, layout=layout, log_y=not args.linear_y, out_path=args.out
        )
    except (CliError, SchemaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
