"""Single figure-id driven entry point."""

from __future__ import annotations

import argparse
import sys

from .figures import FIGURES, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="qsfigures",
        description="Render pipeline output files into figure panels.",
    )
    parser.add_argument(
        "--figure", type=int, required=True, choices=sorted(FIGURES),
        help="figure id to rebuild",
    )
    parser.add_argument("--data", required=True, help="pipeline output directory")
    parser.add_argument("--out", required=True, help="directory for the rendered image")
    parser.add_argument("--dpi", type=int, default=150)
    args = parser.parse_args(argv)
    try:
        path = render(args.figure, args.data, args.out, dpi=args.dpi)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
