"""Command line entry point.

    gaussperc <experiment> --config run.json [--out DIR] [--seed N] [--threads N]
    gaussperc validate --config run.json
    gaussperc plot --table t.csv --spec spec.json [--output fig.svg]

Exit codes: 0 success, 2 invalid configuration, 3 resource budget exceeded,
4 any other failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from ..errors import ConfigError, ResourceBudgetError
from . import config as cfgmod
from .config import EXPERIMENTS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RESOURCE = 3
EXIT_RUNTIME = 4

OUT_ENV = "GAUSSPERC_OUT"

log = logging.getLogger("gaussperc")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaussperc", description="Gaussian excursion-set percolation experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", type=Path, default=None, help=f"output root (default: config.out or ${OUT_ENV})")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=1)
    sp = sub.add_parser("validate", help="check a configuration without running it")
    sp.add_argument("--config", required=True, type=Path)
    sp = sub.add_parser("plot", help="render a CSV table to SVG")
    sp.add_argument("--table", required=True, type=Path)
    sp.add_argument("--spec", required=True, type=Path)
    sp.add_argument("--output", type=Path, default=None, help="SVG path (default: table path with .svg)")
    return p


def _load(path: Path, experiment: str | None = None):
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from None
    if experiment is not None and isinstance(data, dict):
        named = data.setdefault("experiment", experiment)
        if named != experiment:
            raise ConfigError("experiment", f"config names {named!r} but {experiment!r} was requested")
    return cfgmod.from_dict(data)


def _run(args) -> int:
    from .experiments import run

    cfg = _load(args.config, args.command)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    if args.threads < 1:
        raise ConfigError("threads", "must be >= 1")
    out = args.out or os.environ.get(OUT_ENV) or cfg.out
    store = run(cfg, out, args.threads)
    print(store.path)
    return EXIT_OK


def _validate(args) -> int:
    cfg = _load(args.config)
    print(f"ok: {cfg.experiment}")
    return EXIT_OK


def _plot(args) -> int:
    from .plot import emit_plot

    try:
        spec = json.loads(args.spec.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("spec", str(exc)) from None
    out = args.output or args.table.with_suffix(".svg")
    try:
        emit_plot(args.table, spec, out)
    except KeyError as exc:
        raise ConfigError("spec", str(exc.args[0])) from None
    print(out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            return _validate(args)
        if args.command == "plot":
            return _plot(args)
        return _run(args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceBudgetError as exc:
        print(f"resource budget exceeded: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except Exception as exc:  # noqa: BLE001 - every other failure maps to one exit code
        log.debug("run failed", exc_info=True)
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
