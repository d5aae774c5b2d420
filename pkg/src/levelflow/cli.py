"""Command-line interface.

Subcommands: run (full pipeline per config), solve (solver outputs only),
compare (representation vs FD diff report), fattening, asymptotics, and
example (pinned reproductions asserting their tolerances).
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ExperimentConfig
from .errors import LevelflowError


def _add_common(p):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--out", default="levelflow-out", help="artifact directory")
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap (default: LEVELFLOW_THREADS or 1)")
    p.add_argument("--dx", type=float, default=None, help="override grid spacing")
    p.add_argument("--levels", type=int, default=None, help="override level count")
    p.add_argument("--horizon", type=float, default=None, help="override horizon")


def build_parser():
    parser = argparse.ArgumentParser(prog="levelflow")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "solve", "compare", "fattening", "asymptotics"):
        p = sub.add_parser(name)
        _add_common(p)
    ex = sub.add_parser("example")
    ex.add_argument("name", choices=["paper1d", "radial", "kruskal"])
    ex.add_argument("--out", default=None)
    ex.add_argument("--dx", type=float, default=None)
    ex.add_argument("--depth", type=int, default=5, help="kruskal depth")
    return parser


def _workers(args) -> int:
    if args.threads is not None:
        return max(args.threads, 1)
    env = os.environ.get("LEVELFLOW_THREADS")
    return max(int(env), 1) if env else 1


def _load_config(args) -> ExperimentConfig:
    if not args.config:
        raise LevelflowError("this subcommand needs --config")
    config = ExperimentConfig.from_file(args.config)
    if args.dx is not None:
        if config.grid is None:
            raise LevelflowError("--dx override needs an explicit grid section")
        old_dx = float(config.grid["dx"])
        scale = old_dx / args.dx
        config.grid = dict(config.grid,
                           dx=args.dx,
                           n=[int(round((n - 1) * scale)) + 1
                              for n in config.grid["n"]])
    if args.levels is not None:
        config.levels = dict(config.levels, count=args.levels)
    if args.horizon is not None:
        config.time = dict(config.time, horizon=args.horizon,
                           snapshots=[t for t in config.time.get("snapshots", [])
                                      if t <= args.horizon])
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except LevelflowError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code


def _dispatch(args) -> int:
    if args.command == "example":
        from .examples import EXAMPLES, example_kruskal

        if args.name == "kruskal":
            result = example_kruskal(depth=args.depth)
        elif args.name == "paper1d" and args.dx:
            result = EXAMPLES["paper1d"](dx=args.dx)
        elif args.name == "radial" and args.dx:
            result = EXAMPLES["radial"](dx=args.dx)
        else:
            result = EXAMPLES[args.name]()
        for line in result.lines():
            print(line)
        return 0 if result.passed else 1

    if args.command == "compare":
        if args.config:
            config = _load_config(args)
            config.solver = "both"
            from .pipeline import run

            result = run(config, args.out, workers=_workers(args))
            gap = result.diagnostics.get("compare_final_gap")
            print(f"representation vs FD sup gap: {gap!r}")
            print(f"artifacts: {result.out_dir}")
            return 0
        from .examples import COMPARISON_CONFIGS, comparison_study

        ok = True
        for name in COMPARISON_CONFIGS:
            res = comparison_study(name)
            passed = res["gap_at_base"] <= 5e-2 and res["refinement_ratio"] >= 1.5
            ok &= passed
            print(f"[{'PASS' if passed else 'FAIL'}] {name}: "
                  f"gap {res['gap_at_base']:.4f} at dx={res['base_dx']:g}, "
                  f"refinement ratio {res['refinement_ratio']:.2f}")
        return 0 if ok else 1

    config = _load_config(args)
    if args.command == "solve":
        config.analysis = {}
    elif args.command == "fattening":
        config.analysis = dict(config.analysis, fattening=True)
        if config.solver == "fd":
            config.solver = "representation"
    elif args.command == "asymptotics":
        config.analysis = dict(config.analysis, asymptotics=True)

    from .pipeline import run

    result = run(config, args.out, workers=_workers(args))
    print(f"artifacts: {result.out_dir}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
