#!/usr/bin/env python3
"""
Model parameters, regime detection and derived constants
"""
import json
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Dict, Any, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from core.errors import (
    ConfigError, DomainError, IllPosed, NonPositive, NoRealRoot, OrderingViolation
)

logger = logging.getLogger(__name__)

ALPHA_MIN = 1e-6
ALPHA_MAX = 1.0 - 1e-6


class Regime(str, Enum):
    STANDARD = "Standard"
    ABSTENTION_CASE1 = "Abstention-Case1"
    ABSTENTION_CASE2 = "Abstention-Case2"

    @property
    def is_abstention(self) -> bool:
        return self is not Regime.STANDARD


class ModelParams(BaseModel):
    """Market, preference and wealth inputs; JSON field names are the camelCase aliases"""
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    r: float
    sigma: float
    a_prime: float = Field(alias="aPrime")
    a: float
    b: float
    b_prime: float = Field(alias="bPrime")
    delta: float
    alpha: float
    beta: float
    eta: float
    w: float
    mu: Optional[float] = None

    @property
    def risk_premium(self) -> Optional[float]:
        """(mu - r)/sigma, informational only"""
        if self.mu is None:
            return None
        return (self.mu - self.r) / self.sigma

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(by_alias=True, exclude_none=True)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelParams":
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError("Invalid model parameters", {"errors": e.errors(include_url=False)}) from e

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "ModelParams":
        with open(path, 'r') as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class ValidatedParams:
    params: ModelParams
    regime: Regime


@dataclass(frozen=True)
class DerivedConstants:
    params: ModelParams
    regime: Regime
    theta: float
    lam: float
    x_plus_alpha_b: float
    x_plus_a: float
    x_plus_a_prime: float
    delta_hat: float
    K: Optional[float] = None
    pi: Optional[float] = None

    def x_plus(self, xi_name: str) -> float:
        """Largest root of the cost-side quadratic for kernel 'a' or 'aPrime'"""
        if xi_name == "a":
            return self.x_plus_a
        if xi_name in ("aPrime", "a_prime"):
            return self.x_plus_a_prime
        raise DomainError(f"Unknown cost kernel: {xi_name}")

    @property
    def kink(self) -> float:
        """K^{1/(alpha-1)}, the initial level L_0"""
        return self.K ** (1.0 / (self.params.alpha - 1.0))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "regime": self.regime.value,
            "theta": self.theta,
            "lambda": self.lam,
            "xPlusAlphaB": self.x_plus_alpha_b,
            "xPlusA": self.x_plus_a,
            "xPlusAPrime": self.x_plus_a_prime,
            "deltaHat": self.delta_hat,
            "K": self.K,
            "pi": self.pi,
        }


def validate(params: ModelParams) -> ValidatedParams:
    """Check ranges and orderings, then tag the parameters with their regime"""
    p = params
    for name in ("sigma", "beta", "delta", "w"):
        value = getattr(p, name)
        if not math.isfinite(value) or value <= 0:
            raise NonPositive(f"{name} must be > 0", {"field": name, "value": value})
    for name in ("r", "eta"):
        value = getattr(p, name)
        if not math.isfinite(value) or value < 0:
            raise NonPositive(f"{name} must be >= 0", {"field": name, "value": value})
    if not ALPHA_MIN <= p.alpha <= ALPHA_MAX:
        raise DomainError(f"alpha must lie in [{ALPHA_MIN}, {ALPHA_MAX}]", {"alpha": p.alpha})
    if p.a_prime > p.a:
        raise OrderingViolation("aPrime <= a violated", {"aPrime": p.a_prime, "a": p.a})
    if p.b > p.b_prime:
        raise OrderingViolation("b <= bPrime violated", {"b": p.b, "bPrime": p.b_prime})

    if p.a < p.b:
        bound = p.alpha * p.r + p.alpha * (p.a - p.b) ** 2 / (2 * (1 - p.alpha))
        if not p.delta > bound:
            raise IllPosed(
                "delta > alpha*r + alpha*(a-b)^2/(2*(1-alpha)) violated",
                {"delta": p.delta, "bound": bound},
            )
        regime = Regime.STANDARD
    else:
        bound = p.alpha * p.r
        if not p.delta > bound:
            raise IllPosed("delta > alpha*r violated", {"delta": p.delta, "bound": bound})
        if p.delta < p.r + (1 - p.alpha) * p.beta:
            regime = Regime.ABSTENTION_CASE1
        else:
            regime = Regime.ABSTENTION_CASE2

    logger.debug(f"Parameters validated, regime {regime.value}")
    return ValidatedParams(params=p, regime=regime)


def quad_root_plus(A: float, B: float, C: float) -> float:
    """
    Largest real root of A x^2 + B x + C

    Uses the q-factorisation so that neither root is formed from a difference
    of nearly equal numbers.
    """
    if not A > 0:
        raise DomainError("Leading coefficient must be positive", {"A": A})
    disc = B * B - 4.0 * A * C
    if disc < 0:
        raise NoRealRoot("Negative discriminant", {"A": A, "B": B, "C": C, "discriminant": disc})
    sq = math.sqrt(disc)
    if B <= 0:
        return (-B + sq) / (2.0 * A)
    q = -0.5 * (B + sq)
    return C / q


def theta_lambda(p: ModelParams) -> Tuple[float, float]:
    theta = (p.b - p.a) / (1.0 - p.alpha)
    lam = ((p.a ** 2 - p.b ** 2) - 2.0 * (p.delta - p.r)) / (2.0 * (p.alpha - 1.0))
    return theta, lam


def utility_quadratic(p: ModelParams, theta: float, lam: float, xi: float) -> Tuple[float, float, float]:
    """Coefficients of h^{alpha,xi}(x) = 1/2 a^2 t^2 x^2 - a(lam - beta - t xi) x - (delta + a beta)"""
    A = 0.5 * p.alpha ** 2 * theta ** 2
    B = -p.alpha * (lam - p.beta - theta * xi)
    C = -(p.delta + p.alpha * p.beta)
    return A, B, C


def cost_quadratic(p: ModelParams, theta: float, lam: float, xi: float) -> Tuple[float, float, float]:
    """Coefficients of h^{xi}(x) = 1/2 t^2 x^2 - (lam - beta - t xi) x - (r + beta)"""
    A = 0.5 * theta ** 2
    B = -(lam - p.beta - theta * xi)
    C = -(p.r + p.beta)
    return A, B, C


def derive(vp: ValidatedParams, w: Optional[float] = None, eta: Optional[float] = None) -> DerivedConstants:
    """All constants of the stationary solution, K and pi included"""
    from core.stationary import lagrange_K

    if vp.regime is not Regime.STANDARD:
        raise DomainError("Derived constants need disjoint prior intervals (a < b)",
                          {"regime": vp.regime.value})
    p = vp.params
    theta, lam = theta_lambda(p)
    x_alpha_b = quad_root_plus(*utility_quadratic(p, theta, lam, p.b))
    x_a = quad_root_plus(*cost_quadratic(p, theta, lam, p.a))
    x_a_prime = quad_root_plus(*cost_quadratic(p, theta, lam, p.a_prime))
    for name, x in (("xPlusAlphaB", x_alpha_b), ("xPlusA", x_a), ("xPlusAPrime", x_a_prime)):
        if not x > 1.0:
            raise DomainError(f"{name} must exceed 1", {name: x})

    derived = DerivedConstants(
        params=p,
        regime=vp.regime,
        theta=theta,
        lam=lam,
        x_plus_alpha_b=x_alpha_b,
        x_plus_a=x_a,
        x_plus_a_prime=x_a_prime,
        delta_hat=p.beta + (p.delta - p.r) / (p.alpha - 1.0),
    )
    K = lagrange_K(p.w if w is None else w, p.eta if eta is None else eta, derived)
    derived = replace(derived, K=K, pi=theta * x_a / p.sigma)
    logger.info(f"Derived constants: theta={theta:.6g}, lambda={lam:.6g}, K={K:.6g}, pi={derived.pi:.6g}")
    return derived


def felicity(t, y, params: ModelParams):
    """u(t, y) = e^{-delta t} y^alpha / alpha"""
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0):
        raise DomainError("Satisfaction must be >= 0")
    value = np.exp(-params.delta * np.asarray(t, dtype=float)) * y_arr ** params.alpha / params.alpha
    return float(value) if np.ndim(value) == 0 else value


def felicity_deriv(t, y, params: ModelParams):
    """Marginal utility e^{-delta t} y^{alpha-1}; +inf at y = 0"""
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0):
        raise DomainError("Satisfaction must be >= 0")
    with np.errstate(divide="ignore"):
        powered = np.where(y_arr > 0, y_arr, 0.0) ** (params.alpha - 1.0)
    value = np.exp(-params.delta * np.asarray(t, dtype=float)) * powered
    return float(value) if np.ndim(value) == 0 else value
