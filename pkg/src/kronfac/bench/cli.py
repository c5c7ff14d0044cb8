"""``bench`` command line entry point.

Exit codes: 0 success, 2 bad config or arguments, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .problems import PROBLEMS, get_problem
from .runner import NumericalAbort, load_checkpoint, run_experiment


def _run(args) -> int:
    try:
        cfg = load_config(args.config)
        summary = run_experiment(cfg, args.out, args.seed, plots=not args.no_plots)
    except ConfigError as err:
        print(f"bench: config error: {err}", file=sys.stderr)
        return 2
    except NumericalAbort as err:
        print(f"bench: {err}", file=sys.stderr)
        print(f"last good checkpoint: {err.checkpoint}", file=sys.stderr)
        return 3
    print(f"{summary['status']}: {summary['iterations']} iterations, "
          f"train error {summary['final_train_error']}, results in {args.out}")
    return 0


def _diag(args) -> int:
    from .diagnostics import dump_fisher_diagnostics

    try:
        theta, name, data_file = load_checkpoint(args.checkpoint)
        problem = get_problem(name, data_file)
    except (OSError, KeyError, ValueError) as err:
        print(f"bench: cannot load checkpoint: {err}", file=sys.stderr)
        return 2
    if args.gamma <= 0:
        print("bench: --gamma must be positive", file=sys.stderr)
        return 2
    try:
        summary = dump_fisher_diagnostics(problem.net, theta, problem.data.inputs, args.gamma,
                                          args.out, plots=not args.no_plots)
    except ValueError as err:
        print(f"bench: {err}", file=sys.stderr)
        return 2
    for k, v in summary.items():
        print(f"{k},{v:.6g}")
    return 0


def _list(args) -> int:
    for name, (_, desc) in PROBLEMS.items():
        print(f"{name}\t{desc}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description="K-FAC benchmark harness")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(func=_run)
    d = sub.add_parser("diag", help="dense Fisher diagnostics for a small checkpoint")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--gamma", type=float, required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--no-plots", action="store_true")
    d.set_defaults(func=_diag)
    ls = sub.add_parser("list-problems", help="list built-in problems")
    ls.set_defaults(func=_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
