#!/usr/bin/env python3
"""Sweep the shaping step size alpha against the gated-ascent baseline's beta.

Requires a completed pipeline run (dataset, agent, detector) in the output
directory; evaluates each setting on the last configured scenario and writes
sweep_alpha.csv / sweep_alpha.json next to the other artifacts.
"""

import argparse
import sys

from streetwise.cli import main as cli_main


def parse_args(argv):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=None, help="master seed override")
    p.add_argument("--out", default="runs/default", help="pipeline output directory")
    p.add_argument("--config", default=None, help="JSON config file (optional)")
    p.add_argument("--alphas", default=None, help="comma-separated alpha values")
    p.add_argument("--betas", default=None, help="comma-separated beta values")
    return p.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    cli_args = ["sweep-alpha", "--out", args.out]
    if args.seed is not None:
        cli_args += ["--seed", str(args.seed)]
    if args.config is not None:
        cli_args += ["--config", args.config]
    if args.alphas is not None:
        cli_args += ["--alphas", args.alphas]
    if args.betas is not None:
        cli_args += ["--betas", args.betas]
    return cli_main(cli_args)


if __name__ == "__main__":
    sys.exit(main())
