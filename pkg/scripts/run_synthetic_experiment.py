"""Run the full synthetic pipeline and print the metric table.

    python3 scripts/run_synthetic_experiment.py [--out runs] [--seed 0] [--backend echo ...]
"""

import argparse
import sys

from asca.cli import main


def parse():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", action="append", default=[])
    return p.parse_args()


if __name__ == "__main__":
    args = parse()
    argv = ["pipeline", "--out", args.out, "--seed", str(args.seed)]
    for kind in args.backend:
        argv += ["--backend", kind]
    sys.exit(main(argv))
