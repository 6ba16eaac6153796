"""Single-query comparison of every method on the bundled table1 scene.

Usage: python3 scripts/run_table1.py [--out results/table1.csv] [--reps 20]
"""

import argparse
import sys

from ellrisk import cli


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results/table1.csv")
    p.add_argument("--reps", default="20")
    p.add_argument("--seed", default="0")
    args = p.parse_args()
    return cli.main(["bench-table1", "table1", "--out", args.out, "--reps", args.reps,
                     "--seed", args.seed])


if __name__ == "__main__":
    sys.exit(main())
