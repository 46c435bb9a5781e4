#!/usr/bin/env python3
"""
gexp eval command: g-expectation of a catalogue payoff on a binomial lattice
"""
import logging
from typing import Any, Dict

from commands import add_options, emit_json, option
from core.config_manager import RunConfig
from core.errors import TooLarge
from core.estimate_cache import EstimateCache
from core.gexp import ENUMERATION_BUDGET, PAYOFFS, Driver, Lattice, lattice_solve, prior_enumerate

logger = logging.getLogger(__name__)


def cmd_gexp_eval(config: RunConfig) -> Dict[str, Any]:
    """Lattice step is the configured dt"""
    driver = Driver(option(config, "lo"), option(config, "hi"), option(config, "orientation", "inf"))
    lat = Lattice(option(config, "nSteps", 8), config.mc.dt, recombining=not option(config, "tree", False))
    payoff = option(config, "payoff", "terminal")
    solution = lattice_solve(driver, PAYOFFS[payoff], lat)
    result = {
        "driver": driver.to_dict(),
        "payoff": payoff,
        "nSteps": lat.n_steps,
        "dt": lat.dt,
        "recombining": lat.recombining,
        "value": solution.root,
    }
    at_step = option(config, "atStep")
    if at_step is not None:
        result["atStep"] = at_step
        result["conditional"] = solution.conditional(at_step)
    try:
        result["enumerated"] = prior_enumerate(driver, PAYOFFS[payoff], lat, ENUMERATION_BUDGET)
    except TooLarge:
        logger.info("Lattice too large for prior enumeration, skipping oracle")
    return result


def handle_gexp_eval(args, config: RunConfig, cache: EstimateCache) -> int:
    emit_json("gexp eval", config, cmd_gexp_eval(config))
    return 0


def register(subparsers, common):
    parser = subparsers.add_parser("gexp", help="g-expectations on binomial lattices")
    action = parser.add_subparsers(dest="action", required=True, metavar="{eval}")
    sub = action.add_parser("eval", parents=[common], help="Evaluate a catalogue payoff")
    add_options(sub, [
        ("--lo", "lo", float, 0.0, "Lower kernel bound"),
        ("--hi", "hi", float, 0.0, "Upper kernel bound"),
        ("--orientation", "orientation", str, "inf", "inf or sup"),
        ("--steps", "nSteps", int, 8, "Lattice steps"),
        ("--payoff", "payoff", str, "terminal", f"One of {sorted(PAYOFFS)}"),
        ("--tree", "tree", bool, False, "Use a path tree instead of a recombining lattice"),
        ("--at-step", "atStep", int, None, "Also report conditional values at this level"),
    ])
    sub.set_defaults(handler=handle_gexp_eval)
