"""Command line: ``caclab {analyze,simulate,train,sweep,figures} --config FILE``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 for
failures while computing.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, parse_config, parse_config_text
from .errors import CacLabError, ConfigError
from . import experiments as ex

log = logging.getLogger("caclab")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config file")
    common.add_argument("--seed", type=int, help="override [system] seed")
    common.add_argument("--out", type=Path, help="output directory (overrides [output] dir)")
    common.add_argument("--policies", help="comma-separated subset of conventional,fuzzy,fncac")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="caclab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (
        ("analyze", "recurrence and CTMC blocking at one operating point"),
        ("simulate", "one simulation run per policy"),
        ("train", "train the FNCAC network and write its parameter file"),
        ("sweep", "full utilization sweep to sweep.csv"),
        ("figures", "the five figure CSV files"),
    ):
        sp = sub.add_parser(name, parents=[common], help=text)
        if name in ("analyze", "simulate"):
            sp.add_argument("--utilization", type=float,
                            help="set every class to this load a = lambda/mu")
    return p


def load(args) -> ExperimentConfig:
    if args.config is None:
        cfg = parse_config_text("[system]\nchannels = 30\n", "<defaults>")
    else:
        cfg = parse_config(args.config)
    return cfg.with_overrides(seed=args.seed, output_dir=args.out,
                              policies=args.policies.split(",") if args.policies else None)


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.6g}"


def _print_rows(rows):
    print(f"{'a':>6} {'policy':<13} {'scope':<10} {'analytical':>11} {'ctmc':>11} "
          f"{'empirical':>11} {'+-95%':>10}")
    for r in rows:
        print(f"{r.utilization:>6.3g} {r.policy:<13} {r.class_scope:<10} {_fmt(r.analytical):>11} "
              f"{_fmt(r.ctmc):>11} {_fmt(r.empirical):>11} {_fmt(r.half_width):>10}")


def _run(args) -> int:
    cfg = load(args)
    out = Path(cfg.output_dir)
    if args.command == "analyze":
        rows = ex.analyze_rows(cfg, args.utilization)
        _print_rows(rows)
        path = ex.emit_csv(rows, out / "analyze.csv", ex.metadata_block(cfg, "analyze"))
    elif args.command == "simulate":
        rows = ex.simulate_rows(cfg, args.utilization)
        _print_rows(rows)
        path = ex.emit_csv(rows, out / "simulate.csv", ex.metadata_block(cfg, "simulate"))
    elif args.command == "train":
        path, res = ex.train_command(cfg)
        print(f"held-out accuracy: {res.test_accuracy:.4f}")
        print(f"final loss: train {res.train_loss[-1]:.6g}, held-out {res.best_test_loss[-1]:.6g} "
              f"(best epoch {res.best_epoch})")
    elif args.command == "sweep":
        path = ex.sweep_command(cfg)
    else:
        paths = ex.figures_command(cfg)
        for p in paths.values():
            print(p)
        return EXIT_OK
    print(path)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CacLabError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
