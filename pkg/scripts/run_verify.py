"""Run the full theory verification suite at default trial counts.

Usage: python scripts/run_verify.py [--out DIR] [--seed N]
Writes verify.csv, theorem1_curve.csv, theorem1_keys.csv and verify_summary.txt.
"""

import argparse
import sys
import time
from dataclasses import replace

from unitslab import cli, theory


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/verify")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    spec = replace(cli.ExperimentSpec(), out=args.out, seed=args.seed)
    t0 = time.perf_counter()
    reps = cli.cmd_verify(spec)
    print(theory.summary_block(reps))
    print(f"elapsed {time.perf_counter() - t0:.1f}s")
    return 0 if all(r.passed for r in reps) else 1


if __name__ == "__main__":
    sys.exit(main())
