"""Command line front end.

Verbs: ``sample`` runs a config's samplers and saves the chains; ``estimate``
runs the full pipeline and prints the rendered table; ``reproduce <name>``
runs a bundled preset; ``diagnose-variance`` reruns a config at N and 2N
draws and reports the MC error ratios. Exit codes: 0 success, 1 configuration
error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .datasets import DataError
from .estimators import EstimationError
from .experiment import (
    ConfigError,
    ExperimentConfig,
    diagnose_variance,
    emit_table,
    load_preset,
    render_doubling,
    run_experiment,
    sample_chains,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with the config-error exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser():
    parser = _Parser(
        prog="margpost",
        description="Marginal likelihood estimation from MCMC output.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="path to an experiment config (JSON)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's seed")
        p.add_argument("--out", default=None,
                       help="output directory for reports and tables")
        p.add_argument("--threads", type=int, default=1,
                       help="run independent model entries in parallel")

    common(sub.add_parser("sample", help="run the samplers and save the chains"))
    common(sub.add_parser("estimate", help="estimate evidence and render the table"))
    repro = sub.add_parser("reproduce", help="run a bundled preset end to end")
    repro.add_argument("preset", help="preset name, e.g. table1 .. table5")
    common(repro, config_required=False)
    common(sub.add_parser("diagnose-variance",
                          help="check the MC error ratio between N and 2N draws"))
    return parser


def _load_config(args):
    if args.config is None:
        raise ConfigError("--config", "a config file is required for this verb")
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {args.config}: {exc}") from exc
    return _apply_overrides(ExperimentConfig.from_json(text), args)


def _apply_overrides(config, args):
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.out is not None:
        config = replace(config, out=args.out)
    config.validate()
    return config


def _run_cases(doc, args, label):
    """A preset document with a ``cases`` list maps to doubling diagnostics."""
    rows = []
    for raw in doc["cases"]:
        config = _apply_overrides(ExperimentConfig.from_dict(raw), args)
        rows.extend(diagnose_variance(config))
    text = render_doubling(rows)
    print(text)
    out = args.out
    if out is not None:
        directory = Path(out)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{label}.txt").write_text(text + "\n")
        for i, row in enumerate(rows):
            stem = f"{label}-{i:02d}"
            (directory / f"{stem}-base.json").write_text(row["base"].to_json() + "\n")
            (directory / f"{stem}-doubled.json").write_text(row["doubled"].to_json() + "\n")
    return EXIT_OK


def _dispatch(args):
    if args.verb == "sample":
        config = _load_config(args)
        out = args.out or config.out or "chains"
        for path in sample_chains(config, out, threads=args.threads):
            print(path)
        return EXIT_OK

    if args.verb == "estimate":
        config = _load_config(args)
        reports = run_experiment(config, threads=args.threads)
        print(emit_table(reports, "text"))
        return EXIT_OK

    if args.verb == "reproduce":
        if args.config is not None:
            raise ConfigError("--config", "reproduce uses a bundled preset, not --config")
        doc = load_preset(args.preset)
        if "cases" in doc:
            return _run_cases(doc, args, doc.get("label", args.preset))
        config = _apply_overrides(ExperimentConfig.from_dict(doc), args)
        if config.out is None:
            config = replace(config, out=str(Path("reproductions") / args.preset))
        reports = run_experiment(config, threads=args.threads)
        print(emit_table(reports, "text"))
        return EXIT_OK

    config = _load_config(args)
    rows = diagnose_variance(config)
    text = render_doubling(rows)
    print(text)
    if config.out is not None:
        directory = Path(config.out)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{config.label}-doubling.txt").write_text(text + "\n")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (EstimationError, FloatingPointError, OverflowError,
            ZeroDivisionError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
