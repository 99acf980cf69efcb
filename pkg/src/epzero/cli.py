"""Command line entry point: ``epzero <experiment> --config <file> [--out DIR] [--seed N] [--jobs N]``."""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .config import Experiment, load_config, parse_config
from .errors import ConfigurationError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epzero", description="Run an Euler-Poisson numerical experiment.")
    parser.add_argument("experiment", choices=[e.value for e in Experiment])
    parser.add_argument("--config", help="TOML configuration file (defaults apply when omitted)")
    parser.add_argument("--out", help="output directory (overrides run.output_dir)")
    parser.add_argument("--seed", type=int, help="seed for random-field corpora (overrides run.seed)")
    parser.add_argument("--jobs", type=int, help="worker processes (default: EPZERO_JOBS, then 1)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs is not None and args.jobs < 1:
        print("epzero: --jobs must be a positive integer", file=sys.stderr)
        return 2
    try:
        if args.config:
            config = load_config(args.config, args.experiment)
        else:
            config = parse_config("", args.experiment)
    except ConfigurationError as exc:
        print("epzero: invalid configuration:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"epzero: cannot read configuration: {exc}", file=sys.stderr)
        return 2
    config = config.with_overrides(output_dir=args.out, seed=args.seed, jobs=args.jobs)

    from .experiments import run

    outcome = run(config)
    for check in outcome.checks:
        value = "" if check.value is None else f" {check.value:.6g}"
        print(f"{'PASS' if check.passed else 'FAIL'} {check.name}{value} ({check.threshold}) {check.detail}".rstrip())
    if outcome.error:
        print(f"epzero: experiment failed: {outcome.error}", file=sys.stderr)
    print(f"manifest: {outcome.manifest}")
    return outcome.exit_status


if __name__ == "__main__":
    sys.exit(main())
