"""Command-line figure renderer for the simulator's CSV artifacts."""

from __future__ import annotations

import argparse
import sys

from nudgeplots.render import KINDS, FigureSpec, SchemaError, render


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nudgeplots", description="Render figures from simulator CSVs."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render one figure")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--in", dest="inputs", nargs="+", required=True,
                   help="input CSV path(s)")
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument("--no-shading", action="store_true",
                   help="disable the std-band shading")
    p.add_argument("--dpi", type=int, default=150)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    spec = FigureSpec(
        kind=args.kind,
        inputs=args.inputs,
        output=args.out,
        shading=not args.no_shading,
        dpi=args.dpi,
    )
    try:
        path = render(spec)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
