"""CLI: detector-adapter --frames DIR --model SPEC --out FILE"""

from __future__ import annotations

import argparse
import sys

from . import AdapterError, run_adapter


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="detector-adapter", description=__doc__)
    ap.add_argument("--frames", required=True, help="frame directory (%%06d.pgm|png)")
    ap.add_argument(
        "--model",
        required=True,
        help="brightblob:threshold=T:min_area=A:label=L | hog-person",
    )
    ap.add_argument("--out", required=True, help="output wire-format file")
    args = ap.parse_args(argv)
    try:
        path = run_adapter(args.frames, args.model, args.out)
    except AdapterError as e:
        print(f"error 3 {e}", file=sys.stderr)
        return 3
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
