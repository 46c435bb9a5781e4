#!/usr/bin/env python3
"""
Monte Carlo estimators and statistical checks of the optimality conditions
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Type

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import integrate

from core.errors import (
    ConditionViolated, DomainError, TailTooLarge, TooLarge, VerificationFailure
)
from core.estimate_cache import EstimateCache
from core.gexp import Driver, Lattice, kernel_from_z, lattice_solve
from core.model import DerivedConstants, ModelParams, ValidatedParams
from core.stationary import (
    abstention_solve, expected_cost_closed, expected_utility_closed, present_value
)
from core.tracking import (
    STREAM_INNER, STREAM_OUTER, STREAM_PATHS, STREAM_REPLICA, ConstantKernel, Kernel, TimeGrid,
    block_layout, block_normals, block_rng, candidate_kernels, drifted_brownian, girsanov_density,
    level_path_LK, plan_cost, plan_tilde_cost, plan_utility, simulate_brownian, track
)
from utils.error_logger import ErrorLogger

logger = logging.getLogger(__name__)
error_logger = ErrorLogger("Verify")

N_SE = 3.0


class MCConfig(BaseModel):
    """Monte Carlo settings; JSON field names are the camelCase aliases"""
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    n_paths: int = Field(2000, alias="nPaths", ge=2)
    dt: float = Field(1.0 / 256, gt=0)
    horizon: float = Field(4.0, gt=0)
    seed: int = Field(20240601, ge=0, lt=2 ** 64)
    antithetic: bool = False
    nested_times: int = Field(10, alias="nestedTimes", ge=1)
    nested_outer: int = Field(100, alias="nestedOuter", ge=1)
    nested_inner: int = Field(1000, alias="nestedInner", ge=2)
    nested_span: float = Field(4.0, alias="nestedSpan", ge=0)
    n_workers: int = Field(1, alias="nWorkers", ge=1)
    block_size: int = Field(512, alias="blockSize", ge=2)
    budget: float = Field(0.01, ge=0)
    tail_fraction: float = Field(0.005, alias="tailFraction", gt=0)
    auto_horizon: bool = Field(True, alias="autoHorizon")
    max_horizon: float = Field(256.0, alias="maxHorizon", gt=0)

    @model_validator(mode="after")
    def _antithetic_pairs(self):
        if self.antithetic and (self.n_paths % 2 or self.block_size % 2):
            raise ValueError("antithetic sampling needs even nPaths and blockSize")
        return self

    def fixed(self, horizon: float) -> "MCConfig":
        return self.model_copy(update={"horizon": horizon, "auto_horizon": False})

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(by_alias=True)


@dataclass
class MCEstimate:
    mean: float
    stderr: float
    n_paths: int
    dt: float
    horizon: float
    tail_bound: float

    def within(self, target: float, budget: float = 0.0, n_se: float = N_SE) -> bool:
        """|mean - target| <= n_se * stderr + budget * |target|"""
        return abs(self.mean - target) <= n_se * self.stderr + budget * abs(target)

    def within_truncated(self, target: float, budget: float = 0.0, n_se: float = N_SE) -> bool:
        """Like within, with the truncated mean allowed to fall short of target by up to tail_bound"""
        slack = n_se * self.stderr + budget * abs(target)
        return self.mean - slack <= target <= self.mean + self.tail_bound + slack

    def to_dict(self) -> Dict[str, Any]:
        return {"mean": self.mean, "stderr": self.stderr, "nPaths": self.n_paths,
                "dt": self.dt, "T": self.horizon, "tailBound": self.tail_bound}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MCEstimate":
        return cls(mean=data["mean"], stderr=data["stderr"], n_paths=data["nPaths"],
                   dt=data["dt"], horizon=data["T"], tail_bound=data["tailBound"])


@dataclass
class CostEstimates:
    """Direct Stieltjes estimator and the psi~ route of the same expected cost"""
    direct: MCEstimate
    tilde_route: MCEstimate

    @property
    def joint_stderr(self) -> float:
        return math.hypot(self.direct.stderr, self.tilde_route.stderr)

    def agree(self, n_se: float = N_SE, budget: float = 1e-12) -> bool:
        return abs(self.direct.mean - self.tilde_route.mean) <= n_se * self.joint_stderr + budget * abs(self.direct.mean)

    def to_dict(self) -> Dict[str, Any]:
        return {"direct": self.direct.to_dict(), "tildeRoute": self.tilde_route.to_dict(),
                "jointStderr": self.joint_stderr, "agree": self.agree()}


@dataclass
class CheckReport:
    check: str
    passed: bool
    margin: float
    se: float
    config: Dict[str, Any] = field(default_factory=dict)
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        out = {"check": self.check, "pass": bool(self.passed), "margin": self.margin, "se": self.se,
               "config": self.config}
        out.update(self.details)
        return out

    def raise_for_failure(self, error_cls: Type[VerificationFailure] = VerificationFailure):
        if not self.passed:
            raise error_cls(f"Check {self.check} failed", self.to_dict())


# --- block engine ------------------------------------------------------------

def _run_blocks(cfg: MCConfig, grid: TimeGrid, stream: int,
                block_fn: Callable[[TimeGrid, np.ndarray], Tuple[np.ndarray, ...]]) -> Tuple[np.ndarray, ...]:
    """Evaluate block_fn on every path block and merge the per-path outputs in block order"""
    layout = block_layout(cfg.n_paths, cfg.block_size)

    def run(item):
        block, rows = item
        normals = block_normals(block_rng(cfg.seed, stream, block), rows, grid.n_steps, cfg.antithetic)
        return block_fn(grid, normals)

    if cfg.n_workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_workers) as pool:
            results = list(pool.map(run, layout))
    else:
        results = [run(item) for item in layout]
    return tuple(np.concatenate(parts) for parts in zip(*results))


def _summarize(values: np.ndarray, antithetic: bool) -> Tuple[float, float]:
    if antithetic:
        values = values.reshape(-1, 2).mean(axis=1)
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values)))


def _estimate(values: np.ndarray, tails: np.ndarray, cfg: MCConfig, grid: TimeGrid) -> MCEstimate:
    mean, se = _summarize(values, cfg.antithetic)
    return MCEstimate(mean=mean, stderr=se, n_paths=len(values), dt=grid.dt,
                      horizon=grid.horizon, tail_bound=float(np.mean(tails)))


def _auto_horizon(cfg: MCConfig, estimate_at: Callable[[float], Any],
                  pick: Callable[[Any], MCEstimate] = lambda est: est):
    """Double the horizon until the tail bound is below tail_fraction of the estimate"""
    horizon = cfg.horizon
    while True:
        result = estimate_at(horizon)
        est = pick(result)
        if est.tail_bound <= cfg.tail_fraction * abs(est.mean):
            return result
        if not cfg.auto_horizon:
            logger.warning(f"Tail bound {est.tail_bound:.3g} exceeds {cfg.tail_fraction:.2%} at T={horizon}")
            return result
        if 2 * horizon > cfg.max_horizon:
            raise TailTooLarge("Tail bound stays above the tolerance",
                               {"horizon": horizon, "tailBound": est.tail_bound, "mean": est.mean})
        horizon *= 2
        logger.info(f"Tail bound {est.tail_bound:.3g} too large, doubling horizon to {horizon}")


def _cached(cache: Optional[EstimateCache], operation: str, payload: Dict[str, Any],
            compute: Callable[[], MCEstimate]) -> MCEstimate:
    if cache is not None:
        hit = cache.get_cached_estimate(operation, payload)
        if hit is not None:
            return MCEstimate.from_dict(hit)
    est = compute()
    if cache is not None:
        cache.cache_estimate(operation, payload, est.to_dict())
    return est


# --- tail bounds -------------------------------------------------------------

def _sup_rate(derived: DerivedConstants, xi_max: float) -> Tuple[float, float]:
    """Drift m of log(L e^{beta t}) under the largest kernel and the exponential rate 2|m|/theta^2 of its supremum"""
    m = derived.theta * xi_max - (derived.lam - derived.params.beta)
    rho = 2.0 * abs(m) / derived.theta ** 2 if m < 0 else 0.0
    return m, rho


def _kernel_max(kernel: Kernel, hi: float) -> float:
    return kernel.constant if kernel.constant is not None else hi


def utility_tail(Y_T: np.ndarray, L_T: np.ndarray, horizon: float, K: float,
                 derived: DerivedConstants, xi_max: float) -> np.ndarray:
    """Bound on E[int_T^inf u(t, Y_t) dt | F_T] per path"""
    p = derived.params
    rate = p.delta + p.alpha * p.beta
    m, rho = _sup_rate(derived, xi_max)
    if m < 0 and rho > p.alpha:
        c = np.minimum(L_T / Y_T, 1.0)
        return (math.exp(-p.delta * horizon) * Y_T ** p.alpha / (p.alpha * rate)
                * (1.0 + c ** rho * p.alpha / (rho - p.alpha)))
    growth = p.alpha * max(m, 0.0) + p.alpha ** 2 * derived.theta ** 2
    if rate <= growth:
        raise TailTooLarge("Utility integrand does not decay", {"rate": rate, "growth": growth})
    logger.warning("Using the deterministic utility tail bound")
    L0 = K ** (1.0 / (p.alpha - 1.0))
    bound = (p.eta ** p.alpha * math.exp(-rate * horizon) / rate
             + 2 * L0 ** p.alpha * math.exp(-(rate - growth) * horizon) / (rate - growth)) / p.alpha
    return np.full(np.shape(Y_T), bound)


def cost_tail(Y_T: np.ndarray, L_T: np.ndarray, horizon: float, K: float,
              derived: DerivedConstants, xi_max: float) -> np.ndarray:
    """Bound on E[int_T^inf e^{-rt} dC_t | F_T] per path"""
    p = derived.params
    m, rho = _sup_rate(derived, xi_max)
    if m < 0 and rho > 1.0:
        c = np.minimum(L_T / Y_T, 1.0)
        return math.exp(-p.r * horizon) * Y_T * c ** rho / ((rho - 1.0) * p.beta)
    growth = max(m, 0.0) + derived.theta ** 2
    rate = p.r + p.beta
    if rate <= growth:
        raise TailTooLarge("Cost integrand does not decay", {"rate": rate, "growth": growth})
    logger.warning("Using the deterministic cost tail bound")
    L0 = K ** (1.0 / (p.alpha - 1.0))
    bound = (1 + p.r / p.beta) * (p.eta * math.exp(-rate * horizon) / rate
                                  + 2 * L0 * math.exp(-(rate - growth) * horizon) / (rate - growth))
    return np.full(np.shape(Y_T), bound)


# --- estimators --------------------------------------------------------------

def _payload(derived_or_params, K: float, kernel: Optional[Kernel], cfg: MCConfig, **extra) -> Dict[str, Any]:
    params = derived_or_params.params if isinstance(derived_or_params, DerivedConstants) else derived_or_params
    out = {"params": params.to_dict(), "K": K, "mc": cfg.to_dict()}
    if kernel is not None:
        out["kernel"] = kernel.to_dict()
    out.update(extra)
    return out


def mc_expected_utility(derived: DerivedConstants, K: float, kernel: Optional[Kernel], cfg: MCConfig,
                        cache: Optional[EstimateCache] = None) -> MCEstimate:
    """phi^{xi}(eta) for a kernel with values in [b, b']"""
    p = derived.params
    kernel = kernel or ConstantKernel(p.b)
    xi_max = _kernel_max(kernel, p.b_prime)

    def at(horizon: float) -> MCEstimate:
        grid = TimeGrid.uniform(horizon, cfg.dt)

        def block(grid_, normals):
            B, _ = drifted_brownian(grid_, normals, kernel, bounds=(p.b, p.b_prime))
            L = level_path_LK(B, grid_.times, K, derived)
            tr = track(L, grid_, p.eta, p.beta)
            return plan_utility(tr.Y, grid_, p), utility_tail(tr.Y[:, -1], L[:, -1], grid_.horizon, K, derived, xi_max)

        values, tails = _run_blocks(cfg, grid, STREAM_PATHS, block)
        return _estimate(values, tails, cfg, grid)

    est = _cached(cache, "utility", _payload(derived, K, kernel, cfg), lambda: _auto_horizon(cfg, at))
    logger.info(f"Expected utility {est.mean:.6g} +/- {est.stderr:.2g} (T={est.horizon})")
    return est


def mc_expected_cost(derived: DerivedConstants, K: float, kernel: Optional[Kernel], cfg: MCConfig) -> CostEstimates:
    """psi^{xi}(eta) for a kernel with values in [a', a]: direct sum and psi~ route"""
    p = derived.params
    kernel = kernel or ConstantKernel(p.a)
    xi_max = _kernel_max(kernel, p.a)

    def at(horizon: float) -> CostEstimates:
        grid = TimeGrid.uniform(horizon, cfg.dt)

        def block(grid_, normals):
            B, _ = drifted_brownian(grid_, normals, kernel, bounds=(p.a_prime, p.a))
            L = level_path_LK(B, grid_.times, K, derived)
            tr = track(L, grid_, p.eta, p.beta)
            direct = plan_cost(tr.dC, grid_, p.r)
            y_T = tr.Y[:, -1]
            tilde = ((1 + p.r / p.beta) * plan_tilde_cost(tr.Y, grid_, p.r, p.beta) - p.eta / p.beta
                     + math.exp(-p.r * grid_.horizon) * y_T / p.beta)
            return direct, tilde, cost_tail(y_T, L[:, -1], grid_.horizon, K, derived, xi_max)

        direct, tilde, tails = _run_blocks(cfg, grid, STREAM_PATHS, block)
        return CostEstimates(direct=_estimate(direct, tails, cfg, grid), tilde_route=_estimate(tilde, tails, cfg, grid))

    result = _auto_horizon(cfg, at, pick=lambda est: est.direct)
    logger.info(f"Expected cost {result.direct.mean:.6g} +/- {result.direct.stderr:.2g} (T={result.direct.horizon})")
    return result


def klm_relation(params: ModelParams, K: float, cfg: MCConfig, xi1: Optional[float] = None,
                 xi2: Optional[float] = None, stream: int = STREAM_PATHS,
                 cache: Optional[EstimateCache] = None) -> MCEstimate:
    """
    Multiplier M = K beta E^{xi1}[int e^{-(delta+alpha beta)t} inf_{v<=t} e^{cv} eps^{xi2}_v/eps^{xi1}_v dt]

    with c = delta + beta(alpha-1) - r, paths simulated under the constant kernel xi1.
    """
    p = params
    xi1 = p.b if xi1 is None else xi1
    xi2 = p.a if xi2 is None else xi2
    rate = p.delta + p.alpha * p.beta
    c = p.delta + p.beta * (p.alpha - 1.0) - p.r

    def at(horizon: float) -> MCEstimate:
        grid = TimeGrid.uniform(horizon, cfg.dt)
        weight = (1.0 - math.exp(-rate * grid.dt)) / rate
        discount = np.exp(-rate * grid.times[:-1])
        tail = K * p.beta * math.exp(-rate * grid.horizon) / rate

        def block(grid_, normals):
            B, _ = drifted_brownian(grid_, normals, ConstantKernel(xi1))
            log_ratio = (xi2 - xi1) * B - 0.5 * (xi2 ** 2 - xi1 ** 2) * grid_.times + c * grid_.times
            run_min = np.minimum.accumulate(np.exp(log_ratio), axis=1)
            values = K * p.beta * weight * np.sum(run_min[:, :-1] * discount, axis=1)
            return values, np.full(len(values), tail)

        values, tails = _run_blocks(cfg, grid, stream, block)
        return _estimate(values, tails, cfg, grid)

    est = _cached(cache, "multiplier", _payload(p, K, None, cfg, xi1=xi1, xi2=xi2, stream=stream),
                  lambda: _auto_horizon(cfg, at))
    logger.info(f"Multiplier M={est.mean:.6g} +/- {est.stderr:.2g} (T={est.horizon})")
    return est


def abstention_multiplier_quadrature(params: ModelParams, K: float, horizon: float = np.inf) -> float:
    """Common-prior multiplier by quadrature, optionally truncated at a horizon"""
    p = params
    rate = p.delta + p.alpha * p.beta
    c = p.delta + p.beta * (p.alpha - 1.0) - p.r

    def integrand(t):
        return math.exp(-rate * t) * (math.exp(c * t) if c < 0 else 1.0)

    value, _ = integrate.quad(integrand, 0.0, horizon, epsabs=1e-13, epsrel=1e-12, limit=200)
    return K * p.beta * value


def backward_eq_residual(params: ModelParams, K: float, M: MCEstimate, cfg: MCConfig,
                         xi1: Optional[float] = None, xi2: Optional[float] = None) -> CheckReport:
    """Re-estimate the multiplier on an independent stream and compare with M"""
    replica = klm_relation(params, K, cfg.fixed(M.horizon), xi1=xi1, xi2=xi2, stream=STREAM_REPLICA)
    joint = math.hypot(M.stderr, replica.stderr)
    residual = abs(replica.mean / M.mean - 1.0)
    passed = abs(replica.mean - M.mean) <= N_SE * joint
    report = CheckReport(
        check="backward", passed=passed, margin=residual, se=joint / M.mean, config=cfg.to_dict(),
        details={"M": M.to_dict(), "replica": replica.to_dict()},
    )
    error_logger.log_info(f"Backward equation residual {residual:.3g}", {"pass": passed})
    return report


def multiplier_scaling(params: ModelParams, K: float, cfg: MCConfig, factor: float = 2.0) -> CheckReport:
    """M is linear in K: rerun with factor * K on the same stream"""
    base = klm_relation(params, K, cfg)
    scaled = klm_relation(params, factor * K, cfg.fixed(base.horizon))
    gap = abs(scaled.mean - factor * base.mean)
    se = math.hypot(scaled.stderr, factor * base.stderr)
    return CheckReport(check="scaling", passed=gap <= N_SE * se + 1e-12 * abs(scaled.mean),
                       margin=gap, se=se, config=cfg.to_dict(),
                       details={"M": base.to_dict(), "scaledM": scaled.to_dict(), "factor": factor})


# --- worst-case priors -------------------------------------------------------

def worstcase_search(derived: DerivedConstants, K: float, cfg: MCConfig, n_candidates: int = 50,
                     seed: Optional[int] = None) -> CheckReport:
    """Random adapted kernels never beat the constant worst cases b (utility) and a (cost)"""
    p = derived.params
    seed = cfg.seed if seed is None else seed
    ref_u = mc_expected_utility(derived, K, ConstantKernel(p.b), cfg)
    ref_c = mc_expected_cost(derived, K, ConstantKernel(p.a), cfg).direct
    horizon = max(ref_u.horizon, ref_c.horizon)
    fixed = cfg.fixed(horizon)
    if horizon != ref_u.horizon:
        ref_u = mc_expected_utility(derived, K, ConstantKernel(p.b), fixed)
    if horizon != ref_c.horizon:
        ref_c = mc_expected_cost(derived, K, ConstantKernel(p.a), fixed).direct

    utility_side, cost_side, violations = [], [], []
    for kernel in candidate_kernels(p.b, p.b_prime, n_candidates, seed, horizon):
        est = mc_expected_utility(derived, K, kernel, fixed)
        se = math.hypot(est.stderr, ref_u.stderr)
        entry = {"kernel": kernel.to_dict(), "mean": est.mean, "stderr": est.stderr, "margin": est.mean - ref_u.mean}
        utility_side.append(entry)
        if ref_u.mean > est.mean + N_SE * se:
            violations.append({"side": "utility", **entry})
    for kernel in candidate_kernels(p.a_prime, p.a, n_candidates, seed + 1, horizon):
        est = mc_expected_cost(derived, K, kernel, fixed).direct
        se = math.hypot(est.stderr, ref_c.stderr)
        entry = {"kernel": kernel.to_dict(), "mean": est.mean, "stderr": est.stderr, "margin": ref_c.mean - est.mean}
        cost_side.append(entry)
        if ref_c.mean < est.mean - N_SE * se:
            violations.append({"side": "cost", **entry})

    margins = [e["margin"] for e in utility_side + cost_side]
    report = CheckReport(
        check="worstcase",
        passed=not violations,
        margin=float(min(margins)),
        se=float(max(ref_u.stderr, ref_c.stderr)),
        config=cfg.to_dict(),
        details={
            "utilityReference": ref_u.to_dict(),
            "costReference": ref_c.to_dict(),
            "utilityClosed": expected_utility_closed(p.eta, K, derived),
            "costClosed": expected_cost_closed(p.eta, K, derived),
            "utilityCandidates": utility_side,
            "costCandidates": cost_side,
            "violations": violations,
        },
    )
    error_logger.log_info(f"Worst-case search over {2 * n_candidates} kernels",
                          {"violations": len(violations), "minMargin": report.margin})
    return report


# --- closed form against simulation --------------------------------------------

def closedform_check(derived: DerivedConstants, cfg: MCConfig, plan_K: Optional[float] = None,
                     cache: Optional[EstimateCache] = None) -> CheckReport:
    """
    MC expected utility and both cost estimators against the closed forms at eta,
    each within N_SE standard errors plus cfg.budget; plan_K simulates another plan
    """
    p = derived.params
    plan_K = derived.K if plan_K is None else plan_K
    utility_closed = expected_utility_closed(p.eta, derived.K, derived)
    cost_closed = expected_cost_closed(p.eta, derived.K, derived)
    utility = mc_expected_utility(derived, plan_K, None, cfg, cache=cache)
    cost = mc_expected_cost(derived, plan_K, None, cfg)

    checks = {
        "utility": utility.within_truncated(utility_closed, cfg.budget),
        "costDirect": cost.direct.within_truncated(cost_closed, cfg.budget),
        "costTildeRoute": cost.tilde_route.within_truncated(cost_closed, cfg.budget),
        "routesAgree": cost.agree(budget=cfg.budget),
    }
    relative = {
        "utility": (utility.mean - utility_closed) / utility_closed,
        "costDirect": (cost.direct.mean - cost_closed) / cost_closed,
        "costTildeRoute": (cost.tilde_route.mean - cost_closed) / cost_closed,
    }
    report = CheckReport(
        check="closedform",
        passed=all(checks.values()),
        margin=float(max(abs(v) for v in relative.values())),
        se=float(max(utility.stderr, cost.joint_stderr)),
        config=cfg.to_dict(),
        details={"planK": plan_K, "K": derived.K, "utilityClosed": utility_closed, "costClosed": cost_closed,
                 "utility": utility.to_dict(), "cost": cost.to_dict(), "relativeErrors": relative,
                 "checks": checks, "failed": [name for name, ok in checks.items() if not ok]},
    )
    error_logger.log_info(f"Closed form vs MC: {'pass' if report.passed else 'FAIL'}", relative)
    return report


# --- first-order conditions ----------------------------------------------------

def future_marginal_utility(Y: np.ndarray, grid: TimeGrid, params: ModelParams) -> np.ndarray:
    """J_k = int_{t_k}^T beta e^{-beta(s-t_k)} u_y(s, Y_s) ds with Y decaying between nodes"""
    p = params
    rate = p.delta + p.alpha * p.beta
    times = grid.times
    q = np.zeros(np.shape(Y))
    q[..., :-1] = (p.beta * np.exp(-p.delta * times[:-1]) * np.asarray(Y)[..., :-1] ** (p.alpha - 1.0)
                   * (1.0 - math.exp(-rate * grid.dt)) / rate)
    scaled = q * np.exp(-p.beta * times)
    tail_sums = np.flip(np.cumsum(np.flip(scaled, axis=-1), axis=-1), axis=-1)
    return tail_sums * np.exp(p.beta * times)


def _budget_condition(derived, plan_K, cfg) -> Dict[str, Any]:
    p = derived.params
    cost = mc_expected_cost(derived, plan_K, ConstantKernel(p.a), cfg).direct
    gap = abs(cost.mean - p.w)
    tol = N_SE * cost.stderr + cfg.budget * p.w
    return {"name": "budget", "pass": gap <= tol, "margin": gap, "se": cost.stderr,
            "estimate": cost.to_dict(), "target": p.w}


def _slackness_condition(derived, plan_K, M: MCEstimate, cfg) -> Dict[str, Any]:
    """E^b[int J dC] against M E^a[int e^{-rt} dC] on common random numbers"""
    p = derived.params
    grid = TimeGrid.uniform(M.horizon, cfg.dt)

    def block(grid_, normals):
        Bb, _ = drifted_brownian(grid_, normals, ConstantKernel(p.b))
        tr_b = track(level_path_LK(Bb, grid_.times, plan_K, derived), grid_, p.eta, p.beta)
        lhs = np.sum(future_marginal_utility(tr_b.Y, grid_, p) * tr_b.dC, axis=1)
        Ba, _ = drifted_brownian(grid_, normals, ConstantKernel(p.a))
        tr_a = track(level_path_LK(Ba, grid_.times, plan_K, derived), grid_, p.eta, p.beta)
        return lhs, plan_cost(tr_a.dC, grid_, p.r)

    lhs, cost = _run_blocks(cfg, grid, STREAM_PATHS, block)
    lhs_mean, lhs_se = _summarize(lhs, cfg.antithetic)
    cost_mean, cost_se = _summarize(cost, cfg.antithetic)
    diff_mean, diff_se = _summarize(lhs - M.mean * cost, cfg.antithetic)
    rhs = M.mean * cost_mean
    se = math.hypot(diff_se, cost_mean * M.stderr)
    return {"name": "slackness", "pass": abs(diff_mean) <= N_SE * se + cfg.budget * abs(rhs),
            "margin": abs(diff_mean), "se": se, "lhs": lhs_mean, "lhsStderr": lhs_se,
            "rhs": rhs, "cost": cost_mean, "costStderr": cost_se, "ratio": lhs_mean / rhs if rhs else None}


def _marginal_utility_condition(derived, plan_K, M: MCEstimate, cfg) -> Dict[str, Any]:
    """Nested estimate of the conditional marginal utility against M e^{-rt} at outer grid times"""
    p = derived.params
    outer_grid = TimeGrid.uniform(cfg.nested_span, cfg.dt) if cfg.nested_span > 0 else TimeGrid(0.0, 0)
    inner_grid = TimeGrid.uniform(M.horizon, cfg.dt)
    n_outer = cfg.nested_outer
    B = simulate_brownian(outer_grid, cfg.seed, n_outer, stream=STREAM_OUTER, block_size=cfg.block_size)
    L = level_path_LK(B, outer_grid.times, plan_K, derived)
    outer = track(L, outer_grid, p.eta, p.beta)
    indices = np.unique(np.round(np.linspace(0, outer_grid.n_steps, cfg.nested_times)).astype(int))

    def evaluate(point):
        i, k = point
        t = float(outer_grid.times[k])
        rng = block_rng(cfg.seed, STREAM_INNER, i, k)
        normals = block_normals(rng, cfg.nested_inner, inner_grid.n_steps)
        W, _ = drifted_brownian(inner_grid, normals, ConstantKernel(p.b))
        L_in = L[i, k] * np.exp(derived.theta * W - derived.lam * inner_grid.times)
        Y_in = track(L_in, inner_grid, outer.Y[i, k], p.beta).Y
        X = math.exp(-p.delta * t) * future_marginal_utility(Y_in, inner_grid, p)[:, 0]
        est, se = _summarize(X, False)
        density = math.exp((p.b - p.a) * B[i, k] - 0.5 * (p.b ** 2 - p.a ** 2) * t)
        ratio = density * est * math.exp(p.r * t) / M.mean
        ratio_se = ratio * math.hypot(se / est, M.stderr / M.mean)
        consumed = bool(outer.dC[i, k] > 0)
        upper_ok = ratio <= 1.0 + N_SE * ratio_se + cfg.budget
        equal_ok = abs(ratio - 1.0) <= N_SE * ratio_se + cfg.budget if consumed else True
        return {"path": int(i), "t": t, "ratio": ratio, "se": ratio_se, "consumed": consumed,
                "strict": bool(ratio < 1.0 - N_SE * ratio_se), "pass": bool(upper_ok and equal_ok)}

    points = [(i, int(k)) for i in range(n_outer) for k in indices]
    if cfg.n_workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_workers) as pool:
            results = list(pool.map(evaluate, points))
    else:
        results = [evaluate(point) for point in points]
    failures = [r for r in results if not r["pass"]]
    return {
        "name": "marginalUtility",
        "pass": not failures,
        "margin": float(max(r["ratio"] for r in results) - 1.0),
        "se": float(max(r["se"] for r in results)),
        "points": len(results),
        "consumptionPoints": sum(r["consumed"] for r in results),
        "strictPoints": sum(r["strict"] for r in results),
        "failures": failures[:20],
        "detail": results,
    }


def foc_check(derived: DerivedConstants, M: MCEstimate, cfg: MCConfig, plan_K: Optional[float] = None,
              conditions: Sequence[str] = ("budget", "marginalUtility", "slackness")) -> CheckReport:
    """
    Sufficient first-order conditions for the plan tracking L^{plan_K}:
    budget binds, discounted marginal utility bounded by M e^{-rt} (equality when
    consuming) and the global complementary-slackness equality
    """
    plan_K = derived.K if plan_K is None else plan_K
    fixed = cfg.fixed(M.horizon)
    results = []
    if "budget" in conditions:
        results.append(_budget_condition(derived, plan_K, fixed))
    if "marginalUtility" in conditions:
        results.append(_marginal_utility_condition(derived, plan_K, M, fixed))
    if "slackness" in conditions:
        results.append(_slackness_condition(derived, plan_K, M, fixed))
    failed = [r["name"] for r in results if not r["pass"]]
    report = CheckReport(
        check="foc",
        passed=not failed,
        margin=float(max(r["margin"] for r in results)),
        se=float(max(r["se"] for r in results)),
        config=cfg.to_dict(),
        details={"planK": plan_K, "K": derived.K, "M": M.to_dict(), "conditions": results, "failed": failed},
    )
    error_logger.log_info("First-order condition check", {"failed": failed, "planK": plan_K})
    return report


def condition_error(report: CheckReport) -> Optional[ConditionViolated]:
    """ConditionViolated(which, where, margin) for the first failing condition"""
    for cond in report.details.get("conditions", []):
        if not cond["pass"]:
            where = cond.get("failures", [None])[0] if cond["name"] == "marginalUtility" else None
            return ConditionViolated(f"Condition {cond['name']} violated",
                                     {"which": cond["name"], "where": where, "margin": cond["margin"]})
    return None


# --- pathwise identity -------------------------------------------------------

def e77_residual(grid: TimeGrid, B: np.ndarray, Y: np.ndarray, dC: np.ndarray, xi,
                 params: ModelParams) -> np.ndarray:
    """
    int e^{-rt} eps dC minus its integration-by-parts form
    (1/beta) e^{-rT} eps_T Y_T - eta/beta + (1 + r/beta) int e^{-rt} eps Y dt
    - (1/beta) int e^{-rt} xi eps Y dB, left-point sums on the grid
    """
    p = params
    eps = girsanov_density(B, xi, grid.dt)
    D = np.exp(-p.r * grid.times) * eps
    xi = np.broadcast_to(np.asarray(xi, dtype=float), np.shape(np.diff(B, axis=-1)))
    lhs = np.sum(D * dC, axis=-1)
    DY = (D * Y)[..., :-1]
    rhs = (D[..., -1] * Y[..., -1] / p.beta - p.eta / p.beta
           + (1 + p.r / p.beta) * np.sum(DY, axis=-1) * grid.dt
           - np.sum(xi * DY * np.diff(B, axis=-1), axis=-1) / p.beta)
    return lhs - rhs


def e77_identity_check(path, xi: float, params: ModelParams) -> float:
    """Residual of the identity along one GridPath"""
    dC = np.diff(path.C, prepend=0.0)
    return float(e77_residual(path.grid, path.B, path.Y, dC, xi, params))


def e77_refinement(derived: DerivedConstants, cfg: MCConfig, levels: Sequence[int] = (8, 9, 10, 11, 12),
                   horizon: float = 1.0, xi: Optional[float] = None, n_paths: Optional[int] = None) -> CheckReport:
    """Median |residual| on nested grids dt = 2^-level sampled from one fine path set"""
    p = derived.params
    xi = p.a if xi is None else xi
    finest = max(levels)
    fine = TimeGrid.uniform(horizon, 2.0 ** -finest)
    B = simulate_brownian(fine, cfg.seed, n_paths or cfg.n_paths, block_size=cfg.block_size)

    medians = []
    for level in sorted(levels):
        stride = 2 ** (finest - level)
        grid = TimeGrid(fine.horizon, fine.n_steps // stride)
        B_c = B[:, ::stride]
        tr = track(level_path_LK(B_c, grid.times, derived.K, derived), grid, p.eta, p.beta)
        residual = e77_residual(grid, B_c, tr.Y, tr.dC, xi, p)
        medians.append(float(np.median(np.abs(residual))))
    decreasing = all(b < a for a, b in zip(medians, medians[1:]))
    return CheckReport(check="e77", passed=decreasing, margin=medians[-1], se=0.0, config=cfg.to_dict(),
                       details={"dts": [2.0 ** -lv for lv in sorted(levels)], "medians": medians, "kernel": xi})


# --- present value and refinement --------------------------------------------

def mc_present_value(derived: DerivedConstants, K: float, t: float, B_t: float, Y_t: float,
                     cfg: MCConfig) -> MCEstimate:
    """Remaining discounted cost E^a_t[int_t^inf e^{-r(s-t)} dC_s] by regenerating paths from the state"""
    p = derived.params
    L_t = float(level_path_LK(np.asarray(B_t), np.asarray(t), K, derived))

    def at(horizon: float) -> MCEstimate:
        grid = TimeGrid.uniform(horizon, cfg.dt)

        def block(grid_, normals):
            W, _ = drifted_brownian(grid_, normals, ConstantKernel(p.a))
            L_in = L_t * np.exp(derived.theta * W - derived.lam * grid_.times)
            tr = track(L_in, grid_, Y_t, p.beta)
            return plan_cost(tr.dC, grid_, p.r), cost_tail(tr.Y[:, -1], L_in[:, -1], grid_.horizon, K, derived, p.a)

        values, tails = _run_blocks(cfg, grid, STREAM_INNER, block)
        return _estimate(values, tails, cfg, grid)

    return _auto_horizon(cfg, at)


def present_value_check(derived: DerivedConstants, cfg: MCConfig, t: float = 1.0, path_seed: Optional[int] = None,
                        budget: Optional[float] = None) -> CheckReport:
    """
    Nested remaining-cost estimate against the closed-form present value on one simulated state

    The state is the last node up to t where the plan consumed, so Y = L there and
    further consumption is not a rare event. The grid supremum misses crossings
    between nodes, so the estimate sits below the closed form by O(sqrt(dt)).
    """
    p = derived.params
    budget = cfg.budget if budget is None else budget
    grid = TimeGrid.uniform(t, cfg.dt)
    seed = cfg.seed if path_seed is None else path_seed
    B = simulate_brownian(grid, seed, 1, stream=STREAM_OUTER)[0]
    tr = track(level_path_LK(B, grid.times, derived.K, derived), grid, p.eta, p.beta)
    k = int(np.flatnonzero(tr.dC > 0)[-1])
    t_k, B_k, Y_k = float(grid.times[k]), float(B[k]), float(tr.Y[k])
    closed = present_value(t_k, B_k, Y_k, derived)
    est = mc_present_value(derived, derived.K, t_k, B_k, Y_k, cfg)
    passed = est.mean <= closed + N_SE * est.stderr and est.within(closed, budget)
    return CheckReport(check="presentValue", passed=passed, margin=abs(est.mean - closed), se=est.stderr,
                       config=cfg.to_dict(),
                       details={"t": t_k, "B": B_k, "Y": Y_k, "budget": budget,
                                "closed": closed, "estimate": est.to_dict()})


def refinement_study(derived: DerivedConstants, cfg: MCConfig, levels: Sequence[int] = (4, 5, 6, 7, 8)) -> CheckReport:
    """Expected cost under a on nested grids sharing one fine path set"""
    p = derived.params
    finest = max(levels)
    fine = TimeGrid.uniform(cfg.horizon, 2.0 ** -finest)

    def block(grid_, normals):
        B_fine, _ = drifted_brownian(grid_, normals, ConstantKernel(p.a))
        out = []
        for level in sorted(levels):
            stride = 2 ** (finest - level)
            grid = TimeGrid(grid_.horizon, grid_.n_steps // stride)
            B = B_fine[:, ::stride]
            tr = track(level_path_LK(B, grid.times, derived.K, derived), grid, p.eta, p.beta)
            out.append(plan_cost(tr.dC, grid, p.r))
        return tuple(out)

    per_level = _run_blocks(cfg, fine, STREAM_PATHS, block)
    closed = expected_cost_closed(p.eta, derived.K, derived)
    estimates = [_summarize(v, cfg.antithetic) for v in per_level]
    errors = [abs(mean - closed) for mean, _ in estimates]
    improving = all(b < a for a, b in zip(errors, errors[1:]))
    return CheckReport(check="refinement", passed=improving, margin=errors[-1],
                       se=estimates[-1][1], config=cfg.to_dict(),
                       details={"dts": [2.0 ** -lv for lv in sorted(levels)],
                                "estimates": [m for m, _ in estimates],
                                "stderrs": [s for _, s in estimates], "closed": closed})


# --- fixed-point iteration ---------------------------------------------------

@dataclass
class FixedPointReport:
    kernels_g: List[np.ndarray]
    kernels_h: List[np.ndarray]
    z_g: List[np.ndarray]
    z_h: List[np.ndarray]
    distances: List[float]

    def active_match(self, xi1: float, xi2: float) -> bool:
        """Kernels equal (xi1, xi2) wherever the corresponding Z is nonzero"""
        for kg, zg, kh, zh in zip(self.kernels_g, self.z_g, self.kernels_h, self.z_h):
            if np.any(kg[zg != 0] != xi1) or np.any(kh[zh != 0] != xi2):
                return False
        return True

    def to_dict(self) -> Dict[str, Any]:
        return {"distances": self.distances,
                "nodes": sum(len(k) for k in self.kernels_g),
                "zeroZNodes": int(sum(np.sum(z == 0) for z in self.z_g) + sum(np.sum(z == 0) for z in self.z_h))}


def _leaf_kernels(kernels: List[np.ndarray], lat: Lattice) -> np.ndarray:
    n = lat.n_steps
    leaves = np.arange(2 ** n)
    return np.stack([kernels[k][lat.ancestor(k, n, leaves)] for k in range(n)], axis=1)


def fixed_point_iterate(params: ModelParams, K: float, lat: Lattice, xi1: float, xi2: float,
                        g_driver: Optional[Driver] = None, h_driver: Optional[Driver] = None,
                        n_iter: int = 1) -> FixedPointReport:
    """
    Map kernels (xi1, xi2) to the kernels attaining the drivers of the utility and
    cost g-expectations of the plan tracking the level built from them
    """
    if lat.recombining:
        raise DomainError("Fixed-point iteration needs a path tree (path-dependent payoffs)")
    if lat.n_steps > 12:
        raise TooLarge("Fixed-point lattice limited to 12 steps", {"n_steps": lat.n_steps})
    p = params
    g_driver = g_driver or Driver.utility_driver(p)
    h_driver = h_driver or Driver.cost_driver_reflected(p)
    n = lat.n_steps
    grid = TimeGrid(lat.horizon, n)
    inc = lat.increments()
    B = lat.paths()
    kern_g = [np.full(lat.level_size(k), float(xi1)) for k in range(n)]
    kern_h = [np.full(lat.level_size(k), float(xi2)) for k in range(n)]
    distances, z_g, z_h = [], [], []

    for it in range(n_iter):
        x1, x2 = _leaf_kernels(kern_g, lat), _leaf_kernels(kern_h, lat)
        log_ratio = np.zeros(B.shape)
        log_ratio[:, 1:] = np.cumsum((x2 - x1) * inc - 0.5 * (x2 ** 2 - x1 ** 2) * lat.dt, axis=1)
        L = (K * np.exp((p.delta - p.r) * grid.times + log_ratio)) ** (1.0 / (p.alpha - 1.0))
        tr = track(L, grid, p.eta, p.beta)
        sol_u = lattice_solve(g_driver, plan_utility(tr.Y, grid, p), lat)
        sol_c = lattice_solve(h_driver, plan_cost(tr.dC, grid, p.r), lat)
        new_g = [np.atleast_1d(kernel_from_z(g_driver, z)) for z in sol_u.z]
        new_h = [np.atleast_1d(kernel_from_z(h_driver, z)) for z in sol_c.z]
        distance = max(max(float(np.max(np.abs(a - b))) for a, b in zip(new_g, kern_g)),
                       max(float(np.max(np.abs(a - b))) for a, b in zip(new_h, kern_h)))
        distances.append(distance)
        logger.info(f"Fixed-point iteration {it + 1}: sup-distance {distance:.6g}")
        kern_g, kern_h, z_g, z_h = new_g, new_h, sol_u.z, sol_c.z

    if any(b > a for a, b in zip(distances, distances[1:])):
        logger.info(f"Sup-distance increased along the iteration: {distances}")
    return FixedPointReport(kernels_g=kern_g, kernels_h=kern_h, z_g=z_g, z_h=z_h, distances=distances)


# --- abstention ----------------------------------------------------------------

def abstention_variance_check(vp: ValidatedParams, cfg: MCConfig, n_seeds: int = 1000,
                              xi: Optional[float] = None) -> CheckReport:
    """
    The common-prior plan is deterministic: its cost is identical across seeds and
    its simulated utility equals the quadrature value. A plan built from a utility
    and cost kernel that differ must vary across seeds.
    """
    p = vp.params
    if not vp.regime.is_abstention:
        raise DomainError("Abstention check needs overlapping prior intervals (a >= b)")
    plan = abstention_solve(vp)
    xi = p.b if xi is None else xi
    control_xi = p.a_prime if p.a_prime != xi else p.b_prime
    grid = TimeGrid.uniform(cfg.horizon, cfg.dt)

    def plan_on_path(B: np.ndarray, xi_utility: float, xi_cost: float):
        log_ratio = (np.log(girsanov_density(B, xi_utility, grid.dt))
                     - np.log(girsanov_density(B, xi_cost, grid.dt)))
        L = (plan.K * np.exp((p.delta - p.r) * grid.times + log_ratio)) ** (1.0 / (p.alpha - 1.0))
        return track(L, grid, p.eta, p.beta)

    costs = np.empty(n_seeds)
    control_costs = np.empty(n_seeds)
    for s in range(n_seeds):
        B = simulate_brownian(grid, cfg.seed + s, 1)
        costs[s] = plan_cost(plan_on_path(B, xi, xi).dC, grid, p.r)[0]
        control_costs[s] = plan_cost(plan_on_path(B, xi, control_xi).dC, grid, p.r)[0]
    spread = float(np.ptp(costs))
    control_spread = float(np.ptp(control_costs))
    cost_truncated = plan.cost_quadrature(grid.horizon)

    def block(grid_, normals):
        B, _ = drifted_brownian(grid_, normals, ConstantKernel(xi))
        Y = plan_on_path(B, xi, xi).Y
        return plan_utility(Y, grid_, p), np.zeros(len(Y))

    values, tails = _run_blocks(cfg, grid, STREAM_PATHS, block)
    utility = _estimate(values, tails, cfg, grid)
    utility_truncated = plan.utility_quadrature(grid.horizon)
    cost_ok = abs(costs[0] - cost_truncated) <= cfg.budget * cost_truncated
    passed = (spread == 0.0 and control_spread > 0.0 and cost_ok
              and utility.within(utility_truncated, cfg.budget))
    return CheckReport(
        check="abstention", passed=passed, margin=abs(utility.mean - utility_truncated), se=utility.stderr,
        config=cfg.to_dict(),
        details={"plan": plan.to_dict(), "costSpread": spread, "controlKernels": [xi, control_xi],
                 "controlSpread": control_spread, "costGrid": float(costs[0]),
                 "costQuadrature": cost_truncated, "utility": utility.to_dict(),
                 "utilityQuadrature": utility_truncated, "seeds": n_seeds},
    )
