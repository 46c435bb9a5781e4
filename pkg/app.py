#!/usr/bin/env python3
"""
hhk-knightian command-line entry point
"""
import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from commands import lattice, solve, statics, verification
from core import TOOL_NAME, __version__
from core.config_manager import ConfigManager
from core.errors import HHKError
from core.estimate_cache import EstimateCache
from utils.error_logger import ErrorLogger
from utils.output import to_json

load_dotenv()

logging.basicConfig(level=os.getenv("HHK_LOG_LEVEL", "INFO").upper())
logger = logging.getLogger(__name__)

error_logger = ErrorLogger("CLI")

EXIT_OK = 0
EXIT_USAGE = 1


class UsageParser(argparse.ArgumentParser):
    """Usage errors exit with code 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config or flat parameter file")
    common.add_argument("--seed", type=int, help="Root seed")
    common.add_argument("--paths", type=int, help="Monte Carlo paths")
    common.add_argument("--dt", type=float, help="Grid step")
    common.add_argument("--horizon", type=float, help="Initial horizon T")
    common.add_argument("--out", help="Output file (stdout when omitted)")
    common.add_argument("--format", choices=("csv", "json"), help="Output format")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = UsageParser(prog=TOOL_NAME, description="Consumption, satisfaction and portfolio under Knightian uncertainty")
    parser.add_argument("--version", action="version", version=f"{TOOL_NAME} {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True,
                                       metavar="{solve,simulate,verify,statics,gexp}")
    common = common_flags()

    # Register command groups
    for module in (solve, verification, statics, lattice):
        module.register(subparsers, common)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    option_keys = getattr(args, "option_keys", ())
    cli_options = {k: getattr(args, k) for k in option_keys if getattr(args, k) is not None}
    try:
        config = ConfigManager().load_run_config(
            args.config,
            overrides={"seed": args.seed, "paths": args.paths, "dt": args.dt, "horizon": args.horizon,
                       "out": args.out, "format": args.format},
            options=cli_options,
            default_format=getattr(args, "default_format", "json"),
        )
        for key, default in getattr(args, "option_defaults", {}).items():
            if default is not None:
                config.options.setdefault(key, default)
        cache = EstimateCache.from_env()
        return args.handler(args, config, cache)
    except HHKError as e:
        record = error_logger.log_exception(e)
        print(to_json(record), file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
