#!/usr/bin/env python3
"""Run the full default experiment pipeline.

Generates the behavior dataset, trains the offline agent and the disturbance
detector, evaluates every estimator on the default scenario grid, and writes
the comparison table plus plot data under the output directory.
"""

import argparse
import sys

from streetwise.cli import main as cli_main


def parse_args(argv):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=None, help="master seed override")
    p.add_argument("--out", default="runs/default", help="output directory")
    p.add_argument("--config", default=None, help="JSON config file (optional)")
    return p.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    cli_args = ["pipeline", "--out", args.out]
    if args.seed is not None:
        cli_args += ["--seed", str(args.seed)]
    if args.config is not None:
        cli_args += ["--config", args.config]
    return cli_main(cli_args)


if __name__ == "__main__":
    sys.exit(main())
