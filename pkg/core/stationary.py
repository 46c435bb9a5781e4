#!/usr/bin/env python3
"""
Closed-form stationary solution: Lagrange constant, value functions, portfolio,
present value, comparative statics and the abstention regime
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
from scipy import integrate, optimize

from core.errors import DomainError, HHKError, IllPosed, RegionEmpty
from core.model import (
    ALPHA_MAX, ALPHA_MIN, DerivedConstants, ModelParams, Regime, ValidatedParams,
    cost_quadratic, derive, quad_root_plus, theta_lambda, validate
)

logger = logging.getLogger(__name__)

KINK_TOLERANCE = 1e-10
STATICS_QUANTITIES = ("sigma", "riskAversion", "spread")


def _scalar(value):
    return float(value) if np.ndim(value) == 0 else value


def _K_small_wealth(w: float, eta: float, x: float, alpha: float, beta: float) -> float:
    """(beta (x-1) eta^{x-1} w)^{(alpha-1)/x}, formed in logs since eta^{x-1} overflows for large x"""
    return math.exp((alpha - 1.0) / x * (math.log(beta * (x - 1.0) * w) + (x - 1.0) * math.log(eta)))


def lagrange_K(w: float, eta: float, derived: DerivedConstants) -> float:
    """K making the budget bind: expected_cost_closed(eta, K) = w"""
    x = derived.x_plus_a
    alpha, beta = derived.params.alpha, derived.params.beta
    if w >= eta / (beta * (x - 1.0)):
        return ((x - 1.0) / x * (beta * w + eta)) ** (alpha - 1.0)
    return _K_small_wealth(w, eta, x, alpha, beta)


def _kink(K: float, alpha: float) -> float:
    return K ** (1.0 / (alpha - 1.0))


def expected_utility_closed(eta, K: float, derived: DerivedConstants):
    """phi^b(eta): expected utility of the plan tracking L^K under the worst utility prior"""
    p = derived.params
    x = derived.x_plus_alpha_b
    kink = _kink(K, p.alpha)
    pref = 1.0 / (p.alpha * (p.delta + p.alpha * p.beta))
    eta = np.asarray(eta, dtype=float)
    safe = np.where(eta > kink, eta, kink)
    upper = pref * safe ** p.alpha * (1.0 + (kink / safe) ** (p.alpha * x) / (x - 1.0))
    lower = pref * x / (x - 1.0) * kink ** p.alpha
    return _scalar(np.where(eta > kink, upper, lower))


def expected_cost_closed(eta, K: float, derived: DerivedConstants, xi: str = "a"):
    """psi^xi(eta) for xi in {'a', 'aPrime'}"""
    p = derived.params
    x = derived.x_plus(xi)
    kink = _kink(K, p.alpha)
    eta = np.asarray(eta, dtype=float)
    safe = np.where(eta > kink, eta, kink)
    upper = safe * (kink / safe) ** x / ((x - 1.0) * p.beta)
    lower = (x / (x - 1.0) * kink - eta) / p.beta
    return _scalar(np.where(eta > kink, upper, lower))


def tilde_psi_closed(eta, K: float, derived: DerivedConstants, xi: str = "a"):
    """psi~^xi(eta): discounted expected satisfaction E^xi[int e^{-rt} Y_t dt]"""
    p = derived.params
    x = derived.x_plus(xi)
    kink = _kink(K, p.alpha)
    eta = np.asarray(eta, dtype=float)
    safe = np.where(eta > kink, eta, kink)
    upper = (safe * (kink / safe) ** x / (x - 1.0) + safe) / (p.beta + p.r)
    lower = x / (x - 1.0) * kink / (p.beta + p.r)
    return _scalar(np.where(eta > kink, upper, lower))


def kink_gaps(K: float, derived: DerivedConstants) -> Dict[str, float]:
    """Relative gap between the two branches of every piecewise formula at its kink"""
    p = derived.params
    kink = _kink(K, p.alpha)
    x_ab, x_a = derived.x_plus_alpha_b, derived.x_plus_a
    pref = 1.0 / (p.alpha * (p.delta + p.alpha * p.beta))
    phi_upper = pref * kink ** p.alpha * (1.0 + 1.0 / (x_ab - 1.0))
    phi_lower = pref * x_ab / (x_ab - 1.0) * kink ** p.alpha
    psi_upper = kink / ((x_a - 1.0) * p.beta)
    psi_lower = (x_a / (x_a - 1.0) * kink - kink) / p.beta
    threshold = p.eta / (p.beta * (x_a - 1.0))
    k_upper = ((x_a - 1.0) / x_a * (p.beta * threshold + p.eta)) ** (p.alpha - 1.0)
    k_lower = _K_small_wealth(threshold, p.eta, x_a, p.alpha, p.beta) if p.eta > 0 else k_upper
    return {
        "phi": abs(phi_upper - phi_lower) / phi_lower,
        "psi": abs(psi_upper - psi_lower) / psi_lower,
        "K": abs(k_upper - k_lower) / k_upper,
    }


def portfolio_pi(derived: DerivedConstants) -> float:
    """Constant fraction of wealth in the stock"""
    return derived.theta * derived.x_plus_a / derived.params.sigma


def present_value(t, B_t, Y_t, derived: DerivedConstants, K: Optional[float] = None):
    """V_t = e^{theta B_t - lambda t} psi^a(e^{-theta B_t + lambda t} Y_t)"""
    K = derived.K if K is None else K
    scale = np.exp(derived.theta * np.asarray(B_t, dtype=float) - derived.lam * np.asarray(t, dtype=float))
    return _scalar(scale * expected_cost_closed(np.asarray(Y_t, dtype=float) / scale, K, derived))


@dataclass
class ClosedFormSolution:
    K: float
    phi: float
    psi: float
    pi: float
    regime: Regime
    M: Optional[float] = None
    M_stderr: Optional[float] = None
    derived: Optional[DerivedConstants] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        out = {"regime": self.regime.value, "K": self.K, "phi": self.phi, "psi": self.psi, "pi": self.pi}
        if self.M is not None:
            out["M"] = self.M
            out["MStderr"] = self.M_stderr
        if self.derived is not None:
            out["derived"] = self.derived.to_dict()
        out.update(self.extra)
        return out


def solve(vp: ValidatedParams) -> ClosedFormSolution:
    """Closed-form solution in either regime"""
    p = vp.params
    if vp.regime.is_abstention:
        plan = abstention_solve(vp)
        return ClosedFormSolution(
            K=plan.K, phi=plan.utility_quadrature(), psi=plan.cost_closed(), pi=0.0,
            regime=vp.regime, M=plan.M, M_stderr=0.0,
            extra={"initialGulp": plan.initial_gulp, "consumptionStart": plan.t_star},
        )
    derived = derive(vp)
    gaps = kink_gaps(derived.K, derived)
    if max(gaps.values()) > KINK_TOLERANCE:
        logger.warning(f"Branch mismatch at kinks: {gaps}")
    extra = {}
    if p.risk_premium is not None:
        extra["riskPremium"] = p.risk_premium
    return ClosedFormSolution(
        K=derived.K,
        phi=expected_utility_closed(p.eta, derived.K, derived),
        psi=expected_cost_closed(p.eta, derived.K, derived),
        pi=portfolio_pi(derived),
        regime=vp.regime,
        derived=derived,
        extra=extra,
    )


# --- comparative statics -----------------------------------------------------

@dataclass
class StaticsReport:
    quantity: str
    parameter: str
    values: List[float]
    pis: List[float]
    predicted: str
    observed: str
    case: Optional[str] = None
    turning_point: Optional[float] = None
    observed_turning_point: Optional[float] = None
    grid_spacing: Optional[float] = None

    @property
    def passed(self) -> bool:
        if self.observed != self.predicted:
            return False
        if self.turning_point is not None and self.observed_turning_point is not None:
            return abs(self.observed_turning_point - self.turning_point) <= self.grid_spacing
        return True

    def rows(self) -> List[List[float]]:
        return [[v, pi] for v, pi in zip(self.values, self.pis)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "quantity": self.quantity,
            "parameter": self.parameter,
            "predicted": self.predicted,
            "observed": self.observed,
            "case": self.case,
            "turningPoint": self.turning_point,
            "observedTurningPoint": self.observed_turning_point,
            "gridSpacing": self.grid_spacing,
            "pass": self.passed,
            "curve": self.rows(),
        }


def _pi(params: ModelParams) -> float:
    theta, lam = theta_lambda(params)
    return theta * quad_root_plus(*cost_quadratic(params, theta, lam, params.a)) / params.sigma


def _shape(pis: np.ndarray):
    """Monotonicity pattern of a sampled curve and the node where it turns, if any"""
    diffs = np.diff(pis)
    if np.all(diffs > 0):
        return "increasing", None
    if np.all(diffs < 0):
        return "decreasing", None
    signs = np.sign(diffs)
    changes = np.flatnonzero(signs[1:] != signs[:-1])
    if len(changes) == 1 and signs[0] < 0 and signs[-1] > 0:
        return "decreasing-then-increasing", int(changes[0]) + 1
    return "non-monotone", None


def spread_case(params: ModelParams) -> Dict[str, Any]:
    """Which monotonicity case in b - a applies to the fixed (r, delta, alpha, beta)"""
    p = params
    delta_hat = p.beta + (p.delta - p.r) / (p.alpha - 1.0)
    disc = p.delta - 2 * p.alpha * p.delta + p.alpha ** 2 * p.r + p.beta * p.alpha * (1 - p.alpha)
    if delta_hat >= 0:
        return {"case": "i", "predicted": "increasing", "turning": None}
    if disc <= 0:
        return {"case": "ii", "predicted": "decreasing", "turning": None}
    return {"case": "iii", "predicted": "decreasing-then-increasing",
            "turning": math.sqrt(2 * delta_hat / (p.alpha - 1.0))}


def _valid_points(candidates: List[ModelParams]) -> List[ModelParams]:
    points = []
    for cand in candidates:
        try:
            vp = validate(cand)
        except HHKError:
            continue
        if vp.regime is Regime.STANDARD:
            points.append(cand)
    return points


def comparative_statics(params: ModelParams, quantity: str, n_points: int = 20,
                        expect_case: Optional[str] = None) -> StaticsReport:
    """Sampled pi curve over sigma, risk aversion 1 - alpha, or the spread b - a"""
    p = params
    if quantity.lower() == "riskaversion":
        quantity = "riskAversion"
    if quantity not in STATICS_QUANTITIES:
        raise DomainError(f"Unknown statics quantity: {quantity}", {"allowed": list(STATICS_QUANTITIES)})
    if not p.a < p.b:
        raise RegionEmpty("Portfolio statics need disjoint prior intervals (a < b)")

    case_info = None
    if quantity == "sigma":
        grid = np.linspace(0.5 * p.sigma, 2.0 * p.sigma, n_points)
        points = _valid_points([p.model_copy(update={"sigma": float(s)}) for s in grid])
        values = [q.sigma for q in points]
        parameter, predicted = "sigma", "decreasing"
    elif quantity == "riskAversion":
        gap = (p.a - p.b) ** 2

        def slack(alpha):
            return p.delta - alpha * p.r - alpha * gap / (2 * (1 - alpha))

        alpha_max = ALPHA_MAX if slack(ALPHA_MAX) > 0 else optimize.brentq(slack, ALPHA_MIN, ALPHA_MAX)
        lo = max(ALPHA_MIN, 0.02 * alpha_max)
        hi = alpha_max - 0.02 * (alpha_max - lo)
        alphas = np.linspace(hi, lo, n_points)
        points = _valid_points([p.model_copy(update={"alpha": float(a)}) for a in alphas])
        values = [1.0 - q.alpha for q in points]
        parameter, predicted = "1-alpha", "decreasing"
    else:
        if not p.delta > p.alpha * p.r:
            raise RegionEmpty("Admissible spread range is empty (delta <= alpha r)")
        theta_max = math.sqrt(2 * (p.delta - p.alpha * p.r) / (p.alpha * (1 - p.alpha)))
        thetas = theta_max * np.linspace(0.02, 0.98, n_points)
        candidates = []
        for theta in thetas:
            b = p.a + float(theta) * (1 - p.alpha)
            candidates.append(p.model_copy(update={"b": b, "b_prime": max(p.b_prime, b)}))
        points = _valid_points(candidates)
        values = [(q.b - q.a) / (1 - q.alpha) for q in points]
        case_info = spread_case(p)
        parameter, predicted = "theta", case_info["predicted"]
        if expect_case is not None and expect_case != case_info["case"]:
            raise RegionEmpty(f"Case ({expect_case}) region is empty for these parameters",
                              {"actualCase": case_info["case"]})

    if len(points) < 2:
        raise RegionEmpty(f"Fewer than two admissible points for {quantity}")
    pis = np.array([_pi(q) for q in points])
    observed, turn_idx = _shape(pis)
    spacing = float(np.max(np.abs(np.diff(values))))
    report = StaticsReport(
        quantity=quantity,
        parameter=parameter,
        values=[float(v) for v in values],
        pis=[float(x) for x in pis],
        predicted=predicted,
        observed=observed,
        case=case_info["case"] if case_info else None,
        turning_point=case_info["turning"] if case_info else None,
        observed_turning_point=float(values[turn_idx]) if turn_idx is not None else None,
        grid_spacing=spacing,
    )
    logger.info(f"Statics {quantity}: predicted {predicted}, observed {observed}")
    return report


# --- abstention regime -------------------------------------------------------

@dataclass
class AbstentionPlan:
    """
    Deterministic optimal plan when a common prior exists

    ybar(t) = e^{beta t} Y_t; Case 1 consumes continuously once the level
    L0 e^{gamma t} passes eta, Case 2 consumes all wealth at time 0.
    """
    params: ModelParams
    regime: Regime
    K: float
    M: float
    L0: float
    gamma: float
    t_star: float
    threshold: Optional[float] = None

    @property
    def initial_gulp(self) -> float:
        if self.regime is Regime.ABSTENTION_CASE2:
            return self.params.w
        return max(self.L0 - self.params.eta, 0.0) / self.params.beta

    def level(self, t):
        p = self.params
        return self.L0 * np.exp((p.delta - p.r) * np.asarray(t, dtype=float) / (p.alpha - 1.0))

    def y_bar(self, t):
        t = np.asarray(t, dtype=float)
        if self.regime is Regime.ABSTENTION_CASE2:
            return np.full(t.shape, max(self.params.eta, self.L0))
        return np.maximum(self.params.eta, self.L0 * np.exp(self.gamma * t))

    def satisfaction(self, t):
        """Y_t = max(eta e^{-beta t}, L0 e^{(gamma-beta) t}); each branch scaled before the max"""
        p = self.params
        t = np.asarray(t, dtype=float)
        if self.regime is Regime.ABSTENTION_CASE2:
            return max(p.eta, self.L0) * np.exp(-p.beta * t)
        return np.maximum(p.eta * np.exp(-p.beta * t), self.L0 * np.exp((self.gamma - p.beta) * t))

    def consumption(self, t):
        """Cumulative consumption C_t including the jump at 0"""
        p = self.params
        t = np.asarray(t, dtype=float)
        if self.regime is Regime.ABSTENTION_CASE2:
            return np.full(t.shape, self.initial_gulp)
        rate = self.gamma - p.beta
        start = np.maximum(t, self.t_star)
        if abs(rate) < 1e-14:
            flow = self.L0 * self.gamma / p.beta * (start - self.t_star)
        else:
            flow = self.L0 * self.gamma / (p.beta * rate) * (np.exp(rate * start) - np.exp(rate * self.t_star))
        return self.initial_gulp + flow

    def cost_closed(self) -> float:
        p = self.params
        if self.regime is Regime.ABSTENTION_CASE2:
            return self.initial_gulp
        slope = (1 - p.alpha) * p.beta + p.r - p.delta
        if p.eta <= self.L0:
            return self.L0 * (1 - p.alpha) * (p.beta + p.r) / (p.beta * (p.delta - p.alpha * p.r)) - p.eta / p.beta
        return (slope / (p.beta * (p.delta - p.alpha * p.r))
                * p.eta ** ((p.alpha * p.r - p.delta) / slope)
                * self.K ** (-(p.r + p.beta) / slope))

    def cost_quadrature(self, horizon: float = np.inf) -> float:
        """int_0^horizon e^{-rt} dC by quadrature of the continuous consumption rate"""
        p = self.params
        if self.regime is Regime.ABSTENTION_CASE2 or horizon <= self.t_star:
            return self.initial_gulp

        # gamma < r + beta in Case 1, so the discounted rate decays
        def rate(s):
            return self.L0 * self.gamma / p.beta * math.exp((self.gamma - p.r - p.beta) * s)

        flow, _ = integrate.quad(rate, self.t_star, horizon, epsabs=1e-13, epsrel=1e-12, limit=200)
        return self.initial_gulp + flow

    def utility_quadrature(self, horizon: float = np.inf) -> float:
        """int_0^horizon e^{-delta t} Y_t^alpha / alpha dt"""
        p = self.params

        def integrand(s):
            return math.exp(-p.delta * s) * float(self.satisfaction(s)) ** p.alpha / p.alpha

        split = min(self.t_star, horizon)
        total = 0.0
        if split > 0:
            part, _ = integrate.quad(integrand, 0.0, split, epsabs=1e-13, epsrel=1e-12, limit=200)
            total += part
        if horizon > split:
            part, _ = integrate.quad(integrand, split, horizon, epsabs=1e-13, epsrel=1e-12, limit=200)
            total += part
        return total

    def to_dict(self) -> Dict[str, Any]:
        return {
            "regime": self.regime.value,
            "K": self.K,
            "M": self.M,
            "L0": self.L0,
            "gamma": self.gamma,
            "consumptionStart": self.t_star,
            "initialGulp": self.initial_gulp,
            "threshold": self.threshold,
            "cost": self.cost_closed(),
        }


def abstention_multiplier(K: float, params: ModelParams) -> float:
    """Kb int e^{-(delta+alpha beta)t} inf_{v<=t} e^{cv} dt for a common prior"""
    p = params
    c = p.delta + p.beta * (p.alpha - 1.0) - p.r
    if c < 0:
        return K * p.beta / (p.r + p.beta)
    return K * p.beta / (p.delta + p.alpha * p.beta)


def abstention_solve(vp: ValidatedParams, w: Optional[float] = None, eta: Optional[float] = None) -> AbstentionPlan:
    """Deterministic plan and K for overlapping prior intervals"""
    p = vp.params
    if not vp.regime.is_abstention:
        raise DomainError("Abstention plan needs overlapping prior intervals (a >= b)")
    if not p.delta > p.alpha * p.r:
        raise IllPosed("delta > alpha*r violated", {"delta": p.delta, "bound": p.alpha * p.r})
    w = p.w if w is None else w
    eta = p.eta if eta is None else eta
    p = p.model_copy(update={"w": w, "eta": eta})

    if vp.regime is Regime.ABSTENTION_CASE2:
        L0 = eta + p.beta * w
        K = L0 ** (p.alpha - 1.0)
        plan = AbstentionPlan(params=p, regime=vp.regime, K=K, M=abstention_multiplier(K, p),
                              L0=L0, gamma=0.0, t_star=0.0)
        logger.info(f"Abstention case 2: consume w={w} at t=0, K={K:.6g}")
        return plan

    q = (p.delta - p.alpha * p.r) / (1 - p.alpha)
    gamma = ((1 - p.alpha) * p.beta + p.r - p.delta) / (1 - p.alpha)
    threshold = eta * ((1 - p.alpha) * p.beta + p.r - p.delta) / (p.beta * (p.delta - p.alpha * p.r))
    if w >= threshold:
        L0 = (p.beta * w + eta) * (p.delta - p.alpha * p.r) / ((1 - p.alpha) * (p.beta + p.r))
    else:
        L0 = (w * p.beta * q / gamma) ** (gamma / (p.r + p.beta)) * eta ** (q / (p.r + p.beta))
    K = L0 ** (p.alpha - 1.0)
    t_star = math.log(eta / L0) / gamma if eta > L0 else 0.0
    plan = AbstentionPlan(params=p, regime=vp.regime, K=K, M=abstention_multiplier(K, p),
                          L0=L0, gamma=gamma, t_star=t_star, threshold=threshold)
    logger.info(f"Abstention case 1: K={K:.6g}, consumption starts at t={t_star:.6g}")
    return plan
