"""Command line entry point: ``footcal <stage> [--config PATH] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .pipeline import (STAGES, ConfigError, PipelineError, format_report, load_config, load_result,
                       run_pipeline, run_stage)

LOG_LEVELS = {"error": logging.ERROR, "warning": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="footcal", description="Foot force-sensor calibration pipeline.")
    p.add_argument("command", choices=[*STAGES, "all", "run", "report"],
                   help="stage to run; 'all' runs every stage, 'run' the config's stage list")
    p.add_argument("--config", help="pipeline config (YAML); defaults to the bundled config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--stage", choices=STAGES, action="append",
                   help="with 'run': restrict to these stages (repeatable)")
    p.add_argument("result", nargs="?", help="with 'report': result file or output directory")
    return p


def _setup_logging():
    name = os.environ.get("FOOTCAL_LOG", "warning").lower()
    if name not in LOG_LEVELS:
        raise ConfigError(f"FOOTCAL_LOG must be one of {', '.join(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        if args.command == "report" and args.result:
            print(format_report(load_result(args.result)))
            return 0
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        if args.command == "report":
            print(format_report(load_result(cfg.out)))
        elif args.command == "all":
            run_pipeline(cfg, stages=STAGES)
        elif args.command == "run":
            run_pipeline(cfg, stages=args.stage or cfg.stages)
        else:
            run_stage(cfg, args.command)
    except PipelineError as exc:
        print(f"footcal: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
