#!/usr/bin/env python3
"""Recompute summary metrics from a run's rounds.csv and compare them to
its summary.json. Exits nonzero on any mismatch.

Example:
  python scripts/crosscheck_summary.py out/run1
"""

import json
import sys
from pathlib import Path


def main() -> int:
    if len(sys.argv) != 2:
        print("usage: crosscheck_summary.py <run_dir>", file=sys.stderr)
        return 2
    run_dir = Path(sys.argv[1])
    rows = (run_dir / "rounds.csv").read_text().strip().splitlines()[1:]
    best = 0.0
    final_test = None
    for row in rows:
        _, test_acc, correct, total, _ = row.split(",")
        best = max(best, int(correct) / int(total))
        final_test = float(test_acc)
    summary = json.loads((run_dir / "summary.json").read_text())
    ok = True
    for key, recomputed in (("attack_accuracy", best), ("final_test_acc", final_test)):
        if abs(summary[key] - recomputed) > 1e-8:
            print(f"mismatch on {key}: summary {summary[key]} vs rounds.csv {recomputed}")
            ok = False
    print("crosscheck:", "OK" if ok else "MISMATCH")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
