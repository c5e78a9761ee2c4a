"""Compare seed-to-seed SSIM spread of single-direction and cross-consistency training.

Usage: python scripts/run_cross_stability.py [--spec FILE] [--out DIR] [--seeds 5] [--R 8]
Writes cross_stability.csv with the per-seed mean OOD SSIM of each variant.
"""

import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from unitslab import cli


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--spec")
    ap.add_argument("--out", default="runs/cross_stability")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--R", type=int, default=8)
    args = ap.parse_args()
    spec = replace(cli.load_spec(args.spec), out=args.out)
    rows = cli.cross_stability(spec, seeds=args.seeds, R=args.R, log=print)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cli.write_rows(out / "cross_stability.csv", rows, ("variant", "seed", "ssim_mean"))
    for v in ("units-base", "units-cross"):
        x = [r["ssim_mean"] for r in rows if r["variant"] == v]
        print(f"{v}: mean {np.mean(x):.4f}, std {np.std(x, ddof=1):.4f}")


if __name__ == "__main__":
    main()
