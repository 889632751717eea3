"""Command line entry point: ``run``, ``check`` and ``converge``.

The output directory is taken from ``--out``, else from the
``CONFORMAL_BLOWUP_OUT`` environment variable, else from ``[output] dir``.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import ConfigError, load
from .experiment import (ENV_OUT, check_artifacts, convergence_suite, format_convergence,
                         format_table, run_experiment, write_convergence)


def _resolve(args):
    try:
        cfg = load(args.config)
    except FileNotFoundError:
        print(f"error: config file {args.config} not found", file=sys.stderr)
        return None
    except ConfigError as exc:
        print(f"error: invalid config {args.config}: {exc}", file=sys.stderr)
        return None
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = args.out or os.environ.get(ENV_OUT)
    if out:
        cfg = cfg.with_output(out)
    return cfg


def cmd_run(args) -> int:
    cfg = _resolve(args)
    if cfg is None:
        return 2
    res = run_experiment(cfg)
    print(format_table(res.outcomes), end="")
    print(f"artifacts: {res.directory}")
    if res.status:
        print(f"FAILED: {', '.join(res.failed)}", file=sys.stderr)
    return res.status


def cmd_check(args) -> int:
    d = Path(args.artifact_dir)
    if not (d / "config.toml").exists():
        print(f"error: {d} is not a run directory (no config.toml)", file=sys.stderr)
        return 2
    try:
        res = check_artifacts(d)
    except (ConfigError, KeyError, FileNotFoundError) as exc:
        print(f"error: cannot read artifacts in {d}: {exc}", file=sys.stderr)
        return 2
    print(format_table(res.outcomes), end="")
    return res.status


def cmd_converge(args) -> int:
    cfg = _resolve(args)
    if cfg is None:
        return 2
    try:
        table = convergence_suite(cfg, args.levels)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    write_convergence(table, Path(cfg.output.dir))
    print(format_convergence(table), end="")
    return 0 if table.passed else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="conformal-blowup",
                                 description="Blow-up experiments for the conformal wave equation.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help="output directory (overrides config and environment)")
        p.add_argument("--seed", type=int, help="seed for bootstrap resampling")

    p = sub.add_parser("run", help="run a configured scenario and write artifacts")
    p.add_argument("config")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="recompute checks from a run directory")
    p.add_argument("artifact_dir")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("converge", help="identity residuals under grid refinement")
    p.add_argument("config")
    p.add_argument("--levels", type=int, default=3, help="number of grid levels (>= 2)")
    common(p)
    p.set_defaults(func=cmd_converge)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
