"""Command line: ``discrl train | eval | summarize``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, parse_config, parse_text, to_text
from .objectives import MODES
from .runs import RunManifest, format_value, parse_seeds, run_train, summarize
from .trainer import TrainingError, deterministic_eval

log = logging.getLogger("discrl")


def _seed_list(text: str) -> tuple[int, ...]:
    try:
        return parse_seeds(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="discrl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run per seed into --out")
    p.add_argument("--config", type=Path, help="key=value config file (missing keys take mode defaults)")
    p.add_argument("--manifest", type=Path, help="re-run an existing manifest.txt (config and seeds)")
    p.add_argument("--seeds", type=_seed_list, help="comma-separated seeds, e.g. 0,1,2")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--mode", choices=MODES, help="overrides the mode in the config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("eval", help="deterministic evaluation of a checkpoint")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="evaluation seed (default: the run's seed)")

    p = sub.add_parser("summarize", help="rebuild summary.csv, summary.txt and figures for a run")
    p.add_argument("--dir", type=Path, required=True)
    p.add_argument("--no-figures", action="store_true")
    return parser


def _train(args, parser) -> int:
    if args.manifest is not None:
        if args.config is not None or args.set:
            parser.error("--manifest cannot be combined with --config or --set")
        manifest = RunManifest.from_text(args.manifest.read_text())
        config, seeds = manifest.config, manifest.seeds
        if args.seeds is not None:
            seeds = args.seeds
        if args.mode is not None and args.mode != config.mode:
            parser.error(f"--mode {args.mode} contradicts the manifest mode {config.mode}")
    else:
        if args.seeds is None:
            parser.error("train: --seeds is required (e.g. --seeds 0,1,2)")
        seeds = args.seeds
        if args.config is not None:
            config = parse_config(args.config, args.mode)
        else:
            config = parse_text("", args.mode or "disc")
        if args.set:
            config = parse_text(to_text(config) + "\n".join(args.set) + "\n", args.mode, source="--set")
    run_train(config, seeds, args.out, figures=not args.no_figures)
    print(f"wrote {args.out} ({config.mode}, seeds {','.join(map(str, seeds))})")
    return 0


def _eval(args, parser) -> int:
    if args.episodes is not None and args.episodes < 1:
        parser.error("--episodes must be >= 1")
    ckpt = load_checkpoint(args.ckpt)
    cfg = ckpt.config
    episodes = args.episodes or cfg.eval_episodes
    seed = cfg.seed if args.seed is None else args.seed
    mean, returns = deterministic_eval(cfg.env_spec(), ckpt.policy, ckpt.obs_filter, episodes, seed)
    print(f"mean_return={format_value(mean)}")
    for k, r in enumerate(returns):
        print(f"episode {k} return={format_value(r)}")
    return 0


def _summarize(args, parser) -> int:
    s = summarize(args.dir, figures=not args.no_figures)
    print(f"max_average_return={format_value(s.max_average_return)} "
          f"+- {format_value(s.max_average_return_std)} at iteration {s.max_average_iteration}")
    print(f"initial_return={format_value(s.initial_return)} improvement_factor={format_value(s.improvement_factor)}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"train": _train, "eval": _eval, "summarize": _summarize}
    try:
        return handlers[args.command](args, parser)
    except (ConfigError, CheckpointError, TrainingError, FileNotFoundError, ValueError) as exc:
        print(f"discrl {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
