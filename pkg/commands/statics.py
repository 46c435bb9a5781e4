#!/usr/bin/env python3
"""
statics command: portfolio comparative statics curves
"""
import logging

from commands import add_options, emit_json, error_logger, option
from core.config_manager import RunConfig
from core.errors import VerificationFailure
from core.estimate_cache import EstimateCache
from core.stationary import StaticsReport, comparative_statics
from utils.output import build_header, write_csv

logger = logging.getLogger(__name__)

STATICS_COMMANDS = {"sigma": "sigma", "riskaversion": "riskAversion", "spread": "spread"}


def cmd_statics(config: RunConfig, which: str) -> StaticsReport:
    return comparative_statics(
        config.params,
        STATICS_COMMANDS[which],
        n_points=option(config, "points", 20),
        expect_case=option(config, "expectCase"),
    )


def handle_statics(args, config: RunConfig, cache: EstimateCache) -> int:
    report = cmd_statics(config, args.which)
    if config.format == "json":
        emit_json(f"statics {args.which}", config, report.to_dict())
    else:
        header = build_header(f"statics {args.which}", config.to_dict())
        header["statics"] = {k: v for k, v in report.to_dict().items() if k != "curve"}
        write_csv((report.parameter, "pi"), report.rows(), header, config.out_path)
    if not report.passed:
        error_logger.log_warning(f"Observed {report.observed}, predicted {report.predicted}")
        raise VerificationFailure(f"Statics {args.which} shape mismatch",
                                  {"predicted": report.predicted, "observed": report.observed})
    return 0


def register(subparsers, common):
    parser = subparsers.add_parser("statics", help="Comparative statics of the portfolio (CSV)")
    which = parser.add_subparsers(dest="which", required=True, metavar="{sigma,riskaversion,spread}")
    for name in STATICS_COMMANDS:
        sub = which.add_parser(name, parents=[common], help=f"pi against {STATICS_COMMANDS[name]}")
        add_options(sub, [
            ("--points", "points", int, 20, "Grid points"),
            ("--expect-case", "expectCase", str, None, "Required spread case (i, ii or iii)"),
        ])
        sub.set_defaults(handler=handle_statics, default_format="csv")
