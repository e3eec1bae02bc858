"""Command-line entry point: run, validate, list-experiments.

Exit codes: 0 success, 1 configuration validation failure, 2 runtime
failure.  The environment variable EOMPULSE_OUTPUT_DIR overrides the
config's output directory.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, load_config
from .experiments import EXPERIMENT_SUMMARIES, ExperimentError, run

OUTPUT_DIR_ENV = "EOMPULSE_OUTPUT_DIR"


def build_parser():
    parser = argparse.ArgumentParser(
        prog="eompulse",
        description="Batch experiments for the pulse-pumped "
                    "electro-optomechanical pair source.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("config", help="path to the YAML config")

    p_val = sub.add_parser("validate", help="validate a config file")
    p_val.add_argument("config", help="path to the YAML config")

    sub.add_parser("list-experiments", help="list available experiments")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)

    if args.command == "list-experiments":
        for name, summary in EXPERIMENT_SUMMARIES.items():
            print(f"{name:20s} {summary}")
        return 0

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 1

    override = os.environ.get(OUTPUT_DIR_ENV)
    if override:
        cfg.output_dir = override
        cfg.resolved["output_dir"] = override

    if args.command == "validate":
        print(f"OK: {cfg.experiment} -> {cfg.output_dir} "
              f"({len(cfg.pumps)} pump configuration(s))")
        return 0

    try:
        manifest = run(cfg)
    except ExperimentError as exc:
        print(f"runtime failure in {exc.experiment}: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(manifest['outputs'])} file(s) to {cfg.output_dir} "
          f"in {manifest['wall_time_s']:.1f} s")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
