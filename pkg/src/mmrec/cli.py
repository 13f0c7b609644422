"""Command-line entry point: ``mmrec <subcommand> [--config PATH] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .errors import MMRecError
from .evaluation import importance_ranking, metric_report, shuffle_importance
from .features import FEATURE_GROUPS
from .pipeline import (ArmConfig, ExperimentConfig, dump_json, prepare, render_reports,
                       run_experiment, train_arm, write_world)
from .ranker import load_checkpoint, predict, save_checkpoint

logger = logging.getLogger("mmrec")


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS keeps a flag given before the subcommand from being reset after it
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, default=argparse.SUPPRESS,
                   help="experiment config JSON (unknown keys are rejected)")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                   help="override world, split and training seeds")
    p.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    flags = _global_flags()
    parser = argparse.ArgumentParser(prog="mmrec", parents=[flags],
                                     description="Caption-token recommendation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("datagen", parents=[flags], help="generate the synthetic world and logs")

    p = sub.add_parser("train", parents=[flags], help="train one arm and save its checkpoint")
    p.add_argument("--arm", default=None, help="arm name (default: every configured arm)")

    p = sub.add_parser("eval", parents=[flags], help="evaluate a checkpoint on the eval split")
    p.add_argument("--arm", required=True)
    p.add_argument("--checkpoint", type=Path, default=None)

    sub.add_parser("experiment", parents=[flags], help="run the full arm matrix and reports")

    p = sub.add_parser("importance", parents=[flags], help="shuffle importance of feature groups")
    p.add_argument("--arm", required=True)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--group", choices=FEATURE_GROUPS, default=None)

    p = sub.add_parser("report", parents=[flags], help="render text tables from a run directory")
    p.add_argument("--run-dir", type=Path, default=None)
    return parser


def load_config(args) -> ExperimentConfig:
    path = getattr(args, "config", None)
    config = ExperimentConfig.load(path) if path else ExperimentConfig()
    seed = getattr(args, "seed", None)
    if seed is not None:
        config = config.with_seed(seed)
    return config


def _arm(config: ExperimentConfig, name: str) -> ArmConfig:
    for arm in config.arms:
        if arm.name == name:
            return arm
    raise MMRecError(f"unknown arm {name!r}; configured arms: {[a.name for a in config.arms]}")


def _checkpoint_path(args, out: Path) -> Path:
    return args.checkpoint or out / "checkpoints" / f"{args.arm}.smrk"


def cmd_datagen(config, out: Path, args) -> int:
    data = prepare(config)
    write_world(data, out / "world")
    dump_json(out / "config.json", config.to_dict())
    print(f"wrote {len(data.impressions)} impressions to {out / 'world'}")
    return 0


def cmd_train(config, out: Path, args) -> int:
    data = prepare(config)
    arms = [_arm(config, args.arm)] if args.arm else config.arms
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "metrics").mkdir(parents=True, exist_ok=True)
    for arm in arms:
        result, _ = train_arm(data, arm)
        save_checkpoint(result.params, out / "checkpoints" / f"{arm.name}.smrk")
        dump_json(out / "metrics" / f"{arm.name}.json",
                  {"arm": dataclasses.asdict(arm), "report": result.report.to_dict(),
                   "train_log": result.train_log})
        print(f"{arm.name}: mean AUC {result.report.mean_auc:.4f}, mean NE {result.report.mean_ne:.4f}")
    return 0


def cmd_eval(config, out: Path, args) -> int:
    arm = _arm(config, args.arm)
    params = load_checkpoint(_checkpoint_path(args, out))
    eval_set = prepare(config).split(arm).eval
    report = metric_report(eval_set.labels, predict(eval_set, params), arm.name, eval_set.example_id)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_experiment(config, out: Path, args) -> int:
    run_experiment(config, out)
    print(render_reports(out))
    return 0


def cmd_importance(config, out: Path, args) -> int:
    arm = _arm(config, args.arm)
    params = load_checkpoint(_checkpoint_path(args, out))
    eval_set = prepare(config).split(arm).eval
    seed = config.eval.importance_seed
    if args.group:
        result = shuffle_importance(params, eval_set, args.group, seed)
    else:
        result = importance_ranking(params, eval_set, seed)
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def cmd_report(config, out: Path, args) -> int:
    print(render_reports(args.run_dir or out))
    return 0


COMMANDS = {"datagen": cmd_datagen, "train": cmd_train, "eval": cmd_eval,
            "experiment": cmd_experiment, "importance": cmd_importance, "report": cmd_report}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = getattr(args, "out", None) or Path("runs/latest")
    try:
        config = load_config(args)
        return COMMANDS[args.command](config, Path(out), args)
    except (MMRecError, ValueError, OSError) as e:
        print(f"mmrec: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
