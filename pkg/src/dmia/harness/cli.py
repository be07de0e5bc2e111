"""Command-line entry point.

Verbs: train, sample, attack, sweep, report, selftest. All experiment
parameters come from the config file; seeds and the output directory can be
overridden per invocation. The environment variable DMIA_THREADS caps the
number of concurrent sweep cells.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from ..errors import DmiaError
from . import runner
from .config import load_config


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="path to the experiment config")
    p.add_argument("--out", default=None, help="override the output directory")
    p.add_argument("--seed-data", type=int, default=None)
    p.add_argument("--seed-train", type=int, default=None)
    p.add_argument("--seed-attack", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmia", description="Train generative targets and measure membership-inference leakage.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p_train = sub.add_parser("train", help="train the configured model, writing checkpoints and a loss log")
    _add_common(p_train)
    p_train.add_argument("--checkpoint-epochs", default=None, help="comma-separated extra checkpoint epochs")

    p_sample = sub.add_parser("sample", help="generate samples from a trained model")
    _add_common(p_sample)
    p_sample.add_argument("-n", type=int, default=64)
    p_sample.add_argument("--epoch", type=int, default=None)

    p_attack = sub.add_parser("attack", help="run the configured attack and write score/metric CSVs")
    _add_common(p_attack)
    p_attack.add_argument("--epoch", type=int, default=None, help="attack a specific checkpoint")

    p_sweep = sub.add_parser("sweep", help="repeat the attack along one axis, writing a combined report")
    _add_common(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=runner.SWEEP_AXES)
    p_sweep.add_argument("--values", required=True, help="comma-separated axis values")

    p_report = sub.add_parser("report", help="convert run CSVs into plot-data files")
    p_report.add_argument("run_dir", help="a run directory (<out>/<config-hash>)")

    sub.add_parser("selftest", help="fast offline checks of the numeric core")
    return parser


def _config_from(args) -> "runner.ExperimentConfig":
    cfg = load_config(args.config)
    overrides = {}
    if args.out is not None:
        overrides["out"] = args.out
    if args.seed_data is not None:
        overrides["seed_data"] = args.seed_data
    if args.seed_train is not None:
        overrides["seed_train"] = args.seed_train
    if args.seed_attack is not None:
        overrides["seed_attack"] = args.seed_attack
    return replace(cfg, **overrides) if overrides else cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "selftest":
            return runner.selftest()
        if args.verb == "report":
            for path in runner.cmd_report(args.run_dir):
                print(path)
            return 0
        cfg = _config_from(args)
        if args.verb == "train":
            marks = tuple(int(x) for x in args.checkpoint_epochs.split(",")) if args.checkpoint_epochs else None
            print(runner.cmd_train(cfg, checkpoint_at=marks))
        elif args.verb == "sample":
            print(runner.cmd_sample(cfg, args.n, epoch=args.epoch))
        elif args.verb == "attack":
            for path in runner.cmd_attack(cfg, epoch=args.epoch):
                print(path)
        elif args.verb == "sweep":
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            print(runner.cmd_sweep(cfg, args.axis, values))
        return 0
    except DmiaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
