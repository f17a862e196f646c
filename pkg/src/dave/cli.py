"""``dave`` command line: ``train``, ``eval`` and ``plot``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import ConfigError, load_config


def _train(args):
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out_dir={args.out}")
    cfg = load_config(args.config, overrides)
    from .harness import run

    out = run(cfg, progress=args.verbose)
    print(os.path.join(out, f"seed{cfg.seed}.csv"))
    return 0


def _eval(args):
    from .harness import evaluate, load_learner

    config_path = args.config
    if config_path is None:
        d = os.path.dirname(os.path.abspath(args.checkpoint))
        name = os.path.basename(args.checkpoint).replace("checkpoint_", "config_").replace(".bin", ".txt")
        config_path = os.path.join(d, name)
    learner, env, _ = load_learner(args.checkpoint, config_path, args.env, args.k)
    ret, optimal = evaluate(learner, env, args.episodes)
    print(f"return={ret!r} optimal={optimal}")
    return 0


def _plot(args):
    from .harness import emit_plots

    emit_plots(args.metrics, args.out)
    print(args.out)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="dave", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one seed from a config file")
    t.add_argument("config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("-v", "--verbose", action="store_true")
    t.set_defaults(func=_train)

    e = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("env", nargs="?")
    e.add_argument("--k", type=float)
    e.add_argument("--config", help="config snapshot (default: the one next to the checkpoint)")
    e.add_argument("--episodes", type=int, default=32)
    e.set_defaults(func=_eval)

    pl = sub.add_parser("plot", help="learning curves from metrics files")
    pl.add_argument("metrics", nargs="+")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"dave: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
