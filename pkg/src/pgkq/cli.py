"""Command line entry point.

    pgkq run --env pendulum --algo vpg-kq --iters 500 --seeds 10 --out run.csv
    pgkq summarize run1.csv run2.csv --out summary.csv
"""
from __future__ import annotations

import argparse
import sys

from .errors import ConfigError
from .harness import config_from, parse_config_file, run_experiment, summarize


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pgkq")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and write a per-seed CSV")
    run.add_argument("--config", help="key = value config file")
    run.add_argument("--env", dest="env_id")
    run.add_argument("--algo")
    run.add_argument("--big-batch", type=int, dest="big_batch")
    run.add_argument("--small-batch", type=int, dest="small_batch")
    run.add_argument("--iters", type=int, dest="iterations")
    run.add_argument("--seeds", type=int)
    run.add_argument("--gamma", type=float)
    run.add_argument("--lr", type=float)
    run.add_argument("--ppo-clip", type=float, dest="ppo_clip")
    run.add_argument("--gp-minibatch", type=int, dest="gp_minibatch")
    run.add_argument("--kernel-loss-form", dest="kernel_loss_form",
                     choices=["nlml", "as_printed"])
    run.add_argument("--advantage", dest="advantage_kind",
                     choices=["default", "final_time"])
    run.add_argument("--seed-base", type=int, dest="seed_base")
    run.add_argument("--probe-episodes", type=int, dest="probe_episodes")
    run.add_argument("--out")

    summ = sub.add_parser("summarize", help="pool CSVs into mean/SE columns")
    summ.add_argument("files", nargs="+")
    summ.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            file_values = parse_config_file(args.config) if args.config else {}
            flag_values = {k: v for k, v in vars(args).items()
                           if k not in ("command", "config")}
            cfg = config_from(file_values, flag_values)
            path = run_experiment(cfg)
            print(f"wrote {path}")
        else:
            path = summarize(args.files, args.out)
            print(f"wrote {path}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
