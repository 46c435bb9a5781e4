#!/usr/bin/env python3
"""
solve and simulate commands
"""
import logging
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from commands import add_options, derived_constants, emit_json, option, validated
from core.config_manager import RunConfig
from core.estimate_cache import EstimateCache
from core.stationary import present_value, solve
from core.tracking import TimeGrid, simulate_optimal_paths
from core.verify import klm_relation
from utils.output import build_header, write_csv

logger = logging.getLogger(__name__)

# Fixed column order of the simulate CSV; V is wealth before consumption at the node
SIMULATE_COLUMNS = ("path", "t", "B", "eps_a", "eps_b", "L", "Y", "C", "V")


def cmd_solve(config: RunConfig, cache: Optional[EstimateCache] = None) -> Dict[str, Any]:
    """Closed-form solution; M by Monte Carlo when the multiplier option is set"""
    vp = validated(config)
    solution = solve(vp)
    if option(config, "multiplier") and not vp.regime.is_abstention:
        M = klm_relation(config.params, solution.K, config.mc, cache=cache)
        solution.M, solution.M_stderr = M.mean, M.stderr
    logger.info(f"Solved {vp.regime.value}: K={solution.K:.6g}, pi={solution.pi:.6g}")
    return solution.to_dict()


def cmd_simulate(config: RunConfig) -> Tuple[Tuple[str, ...], List[List[float]]]:
    """Optimal-plan trajectories with their present value, one row per path and node"""
    derived = derived_constants(config)
    grid = TimeGrid.uniform(config.mc.horizon, config.mc.dt)
    paths = simulate_optimal_paths(derived, grid, config.mc.seed, config.mc.n_paths)
    rows: List[List[float]] = []
    for i, path in enumerate(paths):
        dC = np.diff(path.C, prepend=0.0)
        path.extra["path"] = np.full(grid.n_steps + 1, i)
        path.extra["V"] = present_value(grid.times, path.B, path.Y, derived) + dC
        rows.extend(path.rows(SIMULATE_COLUMNS))
    return SIMULATE_COLUMNS, rows


def handle_solve(args, config: RunConfig, cache: EstimateCache) -> int:
    result = cmd_solve(config, cache)
    if config.format == "csv":
        scalars = [[k, v] for k, v in result.items() if isinstance(v, (int, float, str)) or v is None]
        write_csv(("field", "value"), scalars, build_header("solve", config.to_dict()), config.out_path)
    else:
        emit_json("solve", config, result)
    return 0


def handle_simulate(args, config: RunConfig, cache: EstimateCache) -> int:
    columns, rows = cmd_simulate(config)
    header = build_header("simulate", config.to_dict())
    if config.format == "json":
        emit_json("simulate", config, {"columns": list(columns), "rows": rows})
    else:
        write_csv(columns, rows, header, config.out_path)
    return 0


def register(subparsers, common):
    parser = subparsers.add_parser("solve", parents=[common], help="Closed-form stationary solution")
    add_options(parser, [
        ("--multiplier", "multiplier", bool, False, "Also estimate the multiplier M by Monte Carlo"),
    ])
    parser.set_defaults(handler=handle_solve)

    parser = subparsers.add_parser("simulate", parents=[common], help="Trajectories of the optimal plan (CSV)")
    add_options(parser, [])
    parser.set_defaults(handler=handle_simulate, default_format="csv")
