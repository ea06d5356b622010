"""Command-line entry point.

Exit codes: 0 success, 2 configuration problems (bad config file, unknown
names, missing inputs), 1 runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .errors import ConfigError, StreetwiseError
from .harness import (
    ExperimentConfig,
    run_pipeline,
    stage_compare,
    stage_eval,
    stage_export_plots,
    stage_gen_data,
    stage_train_detector,
    stage_train_rl,
    sweep_alpha,
)

STAGES = {
    "gen-data": stage_gen_data,
    "train-rl": stage_train_rl,
    "train-detector": stage_train_detector,
    "eval": stage_eval,
    "compare": stage_compare,
    "export-plots": stage_export_plots,
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config JSON (defaults apply if omitted)")
    p.add_argument("--seed", type=int, help="override the config master seed")
    p.add_argument("--out", help="override the config output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streetwise",
        description="Offline-RL bandwidth estimation with post-deployment action shaping.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "pipeline", "sweep-alpha"):
        p = sub.add_parser(name)
        _add_common(p)
        if name == "export-plots":
            p.add_argument("--downsample", type=int, default=1, help="keep every n-th point")
        if name == "sweep-alpha":
            p.add_argument("--alphas", type=float, nargs="+", default=[0.01, 0.05, 0.1])
            p.add_argument("--betas", type=float, nargs="+", default=[0.01, 0.1])
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "pipeline":
            run_pipeline(cfg)
        elif args.command == "sweep-alpha":
            sweep_alpha(cfg, alphas=tuple(args.alphas), betas=tuple(args.betas))
        elif args.command == "export-plots":
            stage_export_plots(cfg, downsample=args.downsample)
        else:
            STAGES[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except StreetwiseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
