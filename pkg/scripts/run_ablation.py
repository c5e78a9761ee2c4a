"""Train and evaluate the five sampling-stochasticity variants at desk scale.

Usage: python scripts/run_ablation.py [--spec FILE] [--out DIR] [--steps N]
Writes ablation.csv (mean and std per variant and condition) and
ablation_ssim.csv (per-subject SSIM).
"""

import argparse
import time
from dataclasses import replace

from unitslab import cli


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--spec")
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--steps", type=int)
    args = ap.parse_args()
    spec = replace(cli.load_spec(args.spec), out=args.out)
    if args.steps:
        spec = replace(spec, ablate=replace(spec.ablate, steps=args.steps))
    t0 = time.perf_counter()
    cli.cmd_ablate(spec, log=print)
    print(f"elapsed {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
