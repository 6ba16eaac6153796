"""Closed-loop metrics for the bounded method and the bounding-volume baseline.

Runs each bundled scenario at measurement-noise scales 1 to 4 and writes one
row per (scenario, scale, method) with the aggregate d, l, T and success rate.

Usage: python3 scripts/run_table2.py [--scenarios single_obstacle ...] [--runs 10]
"""

import argparse
import csv
import sys
import time
from pathlib import Path

from ellrisk.config import bundled, load_scenario
from ellrisk.sim import SCHEMA, aggregate, run_batch

METHODS = ("upper_bound", "bounding_volume")


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenarios", nargs="+", default=["single_obstacle"])
    p.add_argument("--scales", nargs="+", type=float, default=[1.0, 2.0, 3.0, 4.0])
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results/table2.csv")
    args = p.parse_args()

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        fh.write(SCHEMA + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "noise_scale", "method", "d_mean", "d_std", "l", "T", "sp",
                    "collided", "infeasible_steps", "wall_s"])
        for name in args.scenarios:
            base = load_scenario(bundled(name))
            for scale in args.scales:
                cfg = base.with_(noise_scale=scale)
                for method in METHODS:
                    t0 = time.perf_counter()
                    results = run_batch(cfg, method, args.runs, args.seed)
                    agg = aggregate([m for _, m in results])
                    row = [name, scale, method, agg.d, agg.d_std, agg.l, agg.T, agg.sp,
                           agg.collided, sum(t.infeasible_steps for t, _ in results),
                           round(time.perf_counter() - t0, 1)]
                    w.writerow(row)
                    fh.flush()
                    print(",".join(str(v) for v in row), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
