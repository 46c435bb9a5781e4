#!/usr/bin/env python3
"""
verify commands: Monte Carlo and lattice checks of the optimality conditions
"""
import logging
from typing import Callable, Dict, Optional

from commands import add_options, derived_constants, emit_json, error_logger, option, validated
from core.config_manager import RunConfig
from core.errors import VerificationFailure, ViolationFound
from core.estimate_cache import EstimateCache
from core.gexp import Lattice
from core.stationary import abstention_solve
from core.verify import (
    CheckReport, abstention_multiplier_quadrature, abstention_variance_check, backward_eq_residual,
    closedform_check, condition_error, e77_refinement, fixed_point_iterate, foc_check, klm_relation,
    multiplier_scaling, present_value_check, refinement_study, worstcase_search
)

logger = logging.getLogger(__name__)


def verify_foc(config: RunConfig, cache: Optional[EstimateCache] = None) -> CheckReport:
    derived = derived_constants(config)
    M = klm_relation(config.params, derived.K, config.mc, cache=cache)
    return foc_check(derived, M, config.mc, plan_K=derived.K * option(config, "planKFactor", 1.0))


def verify_closedform(config: RunConfig, cache: Optional[EstimateCache] = None) -> CheckReport:
    derived = derived_constants(config)
    return closedform_check(derived, config.mc, plan_K=derived.K * option(config, "planKFactor", 1.0), cache=cache)


def verify_worstcase(config: RunConfig, cache: Optional[EstimateCache] = None) -> CheckReport:
    derived = derived_constants(config)
    return worstcase_search(derived, derived.K, config.mc, n_candidates=option(config, "candidates", 50))


def verify_backward(config: RunConfig, cache: Optional[EstimateCache] = None) -> CheckReport:
    vp = validated(config)
    p = config.params
    K = abstention_solve(vp).K if vp.regime.is_abstention else derived_constants(config).K
    M = klm_relation(p, K, config.mc, cache=cache)
    report = backward_eq_residual(p, K, M, config.mc)
    scaling = multiplier_scaling(p, K, config.mc)
    report.passed = report.passed and scaling.passed
    report.details["scaling"] = scaling.to_dict()
    if vp.regime.is_abstention:
        report.details["quadrature"] = abstention_multiplier_quadrature(p, K, M.horizon)
    return report


def verify_e77(config: RunConfig, cache: Optional[EstimateCache] = None) -> CheckReport:
    derived = derived_constants(config)
    finest = option(config, "finestLevel", 12)
    levels = tuple(range(finest - 4, finest + 1))
    return e77_refinement(derived, config.mc, levels=levels, horizon=option(config, "e77Horizon", 1.0))


def verify_fixedpoint(config: RunConfig, cache: Optional[EstimateCache] = None) -> CheckReport:
    derived = derived_constants(config)
    p = config.params
    steps = option(config, "steps", 12)
    lat = Lattice(steps, option(config, "latticeHorizon", 1.0) / steps, recombining=False)
    result = fixed_point_iterate(p, derived.K, lat, p.b, p.a, n_iter=option(config, "iterations", 1))
    return CheckReport(check="fixedpoint", passed=result.active_match(p.b, p.a), margin=result.distances[-1],
                       se=0.0, config=config.mc.to_dict(), details=result.to_dict())


def verify_abstention(config: RunConfig, cache: Optional[EstimateCache] = None) -> CheckReport:
    return abstention_variance_check(validated(config), config.mc, n_seeds=option(config, "seeds", 1000))


def verify_presentvalue(config: RunConfig, cache: Optional[EstimateCache] = None) -> CheckReport:
    return present_value_check(derived_constants(config), config.mc, t=option(config, "time", 1.0),
                               budget=option(config, "pvBudget", 0.25))


def verify_refinement(config: RunConfig, cache: Optional[EstimateCache] = None) -> CheckReport:
    finest = option(config, "finestLevel", 8)
    return refinement_study(derived_constants(config), config.mc, levels=tuple(range(finest - 4, finest + 1)))


VERIFY_COMMANDS: Dict[str, Callable[[RunConfig, Optional[EstimateCache]], CheckReport]] = {
    "closedform": verify_closedform,
    "foc": verify_foc,
    "worstcase": verify_worstcase,
    "backward": verify_backward,
    "e77": verify_e77,
    "fixedpoint": verify_fixedpoint,
    "abstention": verify_abstention,
    "presentvalue": verify_presentvalue,
    "refinement": verify_refinement,
}

VERIFY_OPTIONS = {
    "closedform": [("--plan-k-factor", "planKFactor", float, 1.0, "Scale K of the simulated plan (negative control)")],
    "foc": [("--plan-k-factor", "planKFactor", float, 1.0, "Scale K of the tested plan (negative control)")],
    "worstcase": [("--candidates", "candidates", int, 50, "Random kernels per side")],
    "backward": [],
    "e77": [("--finest-level", "finestLevel", int, 12, "Finest grid dt = 2^-level, five levels"),
            ("--e77-horizon", "e77Horizon", float, 1.0, "Path horizon")],
    "fixedpoint": [("--steps", "steps", int, 12, "Path-tree steps"),
                   ("--lattice-horizon", "latticeHorizon", float, 1.0, "Tree horizon"),
                   ("--iterations", "iterations", int, 1, "Kernel-map iterations")],
    "abstention": [("--seeds", "seeds", int, 1000, "Seeds for the cost variance check")],
    "presentvalue": [("--time", "time", float, 1.0, "Latest time of the simulated state"),
                     ("--pv-budget", "pvBudget", float, 0.25, "Relative grid-bias budget")],
    "refinement": [("--finest-level", "finestLevel", int, 8, "Finest grid dt = 2^-level, five levels")],
}


def cmd_verify(config: RunConfig, which: str, cache: Optional[EstimateCache] = None) -> CheckReport:
    report = VERIFY_COMMANDS[which](config, cache)
    error_logger.log_info(f"verify {which}: {'pass' if report.passed else 'FAIL'}",
                          {"margin": report.margin, "se": report.se})
    return report


def handle_verify(args, config: RunConfig, cache: EstimateCache) -> int:
    report = cmd_verify(config, args.which, cache)
    emit_json(f"verify {args.which}", config, report.to_dict())
    if args.which == "foc":
        error = condition_error(report)
        if error is not None:
            raise error
    report.raise_for_failure(ViolationFound if args.which == "worstcase" else VerificationFailure)
    return 0


def register(subparsers, common):
    parser = subparsers.add_parser("verify", help="Statistical checks of the optimality conditions")
    which = parser.add_subparsers(dest="which", required=True, metavar="{" + ",".join(VERIFY_COMMANDS) + "}")
    for name in VERIFY_COMMANDS:
        sub = which.add_parser(name, parents=[common], help=VERIFY_COMMANDS[name].__name__.replace("_", " "))
        add_options(sub, VERIFY_OPTIONS[name])
        sub.set_defaults(handler=handle_verify)
