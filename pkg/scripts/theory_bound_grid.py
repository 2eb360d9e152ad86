#!/usr/bin/env python3
"""Verify the trimmed-mean deviation bound over the default grid and
write the per-point CSV. Exits 3 if any grid point exceeds the bound.

Example:
  python scripts/theory_bound_grid.py --out theory.csv --trials 5000
"""

import argparse
import sys

from fedarena import cli


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="theory.csv")
    ap.add_argument("--trials", type=int, default=2000)
    ap.add_argument("--sigma", type=float, default=0.3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    values = cli.parse_config_text(
        f"theory_trials = {args.trials}\ntheory_sigma = {args.sigma}\nseed = {args.seed}\n"
    )
    code = cli.run_theory_suite(values, args.out)
    print(f"wrote {args.out}, exit {code}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
