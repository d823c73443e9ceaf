"""haptoplot <kind> <inputs...> -o <out.png>"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import figures

KINDS = ("convergence", "heatmap", "contours", "eps-sweep")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="haptoplot",
        description="Render haptoflow CSV/VTK artifacts as figures",
    )
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("inputs", nargs="+", type=Path)
    parser.add_argument("-o", "--out", type=Path, required=True)
    parser.add_argument("--slopes", type=float, nargs="*", default=[1.0, 2.0],
                        help="reference slopes for convergence plots")
    parser.add_argument("--levels", type=float, nargs="*", default=[1.0, 0.1, 0.01],
                        help="contour levels as fractions of each field maximum")
    parser.add_argument("--field", default=None,
                        help="scalar field name (default: first in the file)")
    parser.add_argument("--signed-log-floor", type=float, default=None,
                        help="render heatmaps on a signed truncated log scale")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    missing = [p for p in args.inputs if not p.exists()]
    if missing:
        print(f"error: missing inputs: {', '.join(map(str, missing))}", file=sys.stderr)
        return 1
    try:
        if args.kind == "convergence":
            result = figures.plot_convergence(args.inputs, args.out, slopes=args.slopes)
            for label, slope in result.annotations["fitted_orders"].items():
                print(f"{label}: fitted order {slope:.3f}")
        elif args.kind == "eps-sweep":
            result = figures.plot_eps_sweep(args.inputs, args.out)
        elif args.kind == "heatmap":
            if len(args.inputs) != 1:
                raise ValueError("heatmap takes exactly one VTK input")
            result = figures.plot_heatmap(args.inputs[0], args.out, field=args.field,
                                          signed_log_floor=args.signed_log_floor)
        else:
            result = figures.plot_contours(args.inputs, args.out,
                                           levels=args.levels, field=args.field)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {result.path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
