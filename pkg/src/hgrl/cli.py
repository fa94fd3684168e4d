"""Command line entry point: ``hgrl {train,eval,snapshot-export,compare}``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .env import ConfigError
from .experiment import (
    MANAGERS,
    ExperimentConfig,
    cmd_compare,
    cmd_eval,
    cmd_snapshot_export,
    cmd_train,
    format_table,
    load_config,
    preset,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # bad flags are configuration errors, not argparse's default exit 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML experiment config")
    p.add_argument("--preset", choices=["desk", "paper"], help="named base config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, help="run directory")
    p.add_argument("--manager", choices=MANAGERS)
    p.add_argument("--episodes", type=int, help="training episodes (train) or evaluation episodes (eval)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hgrl", description="Network PD management experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a manager and write checkpoints")
    _common(p)

    p = sub.add_parser("eval", help="greedy evaluation of a trained or random manager")
    _common(p)
    p.add_argument("--checkpoints", type=Path, help="defaults to OUT/checkpoints")
    p.add_argument("--p-imitate", type=float, nargs="+", help="sweep imitation probabilities")
    p.add_argument("--n", type=int, help="number of agents")
    p.add_argument("--snapshot-every", type=int)

    p = sub.add_parser("snapshot-export", help="bundle evaluation snapshots into one JSON file")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("compare", help="welfare table across evaluation runs")
    p.add_argument("runs", type=Path, nargs="+")
    p.add_argument("--out", type=Path)
    return parser


def resolve_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("--config and --preset are mutually exclusive")
    if args.config:
        config = load_config(args.config)
    elif args.preset:
        if args.seed is None:
            raise ConfigError("--seed is required without --config")
        config = preset(args.preset)
    else:
        raise ConfigError("pass --config or --preset")
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.manager:
        config = replace(config, manager=args.manager)
    if args.out:
        config = replace(config, out=str(args.out))
    if args.episodes is not None:
        if args.command == "train":
            config = replace(config, dqn=replace(config.dqn, episodes=args.episodes))
        else:
            config = replace(config, eval_episodes=args.episodes)
    if getattr(args, "n", None):
        env = replace(config.env, n=args.n, horizon=100 if args.n >= 20 else 50)
        config = replace(config, env=env)
    if getattr(args, "snapshot_every", None):
        config = replace(config, snapshot_every=args.snapshot_every)
    return config


def run(args) -> int:
    if args.command == "train":
        cmd_train(resolve_config(args))
    elif args.command == "eval":
        config = resolve_config(args)
        for r in cmd_eval(config, args.checkpoints, p_values=args.p_imitate):
            print(
                f"{r['manager']} p={r['p']}: avg_welfare {r['avg_welfare']['mean']:.4f} "
                f"final_welfare {r['final_welfare']['mean']:.4f}"
            )
    elif args.command == "snapshot-export":
        bundle = cmd_snapshot_export(args.run_dir, args.out)
        print(f"exported {len(bundle['episodes'])} episodes")
    elif args.command == "compare":
        print(format_table(cmd_compare(args.runs, args.out)))
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure past config validation is a runtime error
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
