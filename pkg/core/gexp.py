#!/usr/bin/env python3
"""
g-expectations on binomial lattices: piecewise-linear drivers, backward induction,
kernel extraction and an exact enumeration of the multiple-priors representation
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Union

import numpy as np

from core.errors import DomainError, LatticeTooCoarse, OrderingViolation, TooLarge
from core.model import ModelParams

logger = logging.getLogger(__name__)

ENUMERATION_BUDGET = 2 ** 16
MAX_TREE_STEPS = 20


class Orientation(str, Enum):
    INF = "inf"
    SUP = "sup"


@dataclass(frozen=True)
class Driver:
    """
    Driver g(z) = min (Inf) or max (Sup) of xi*z over xi in [lo, hi]

    Inf gives lo*z+ - hi*z- (concave), Sup gives hi*z+ - lo*z- (convex); g(0) = 0.
    """
    lo: float
    hi: float
    orientation: Orientation = Orientation.INF

    def __post_init__(self):
        if self.lo > self.hi:
            raise OrderingViolation("Driver interval needs lo <= hi", {"lo": self.lo, "hi": self.hi})
        object.__setattr__(self, "orientation", Orientation(self.orientation))

    @property
    def kappa(self) -> float:
        return max(abs(self.lo), abs(self.hi))

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        pos, neg = np.maximum(z, 0.0), np.maximum(-z, 0.0)
        if self.orientation is Orientation.INF:
            value = self.lo * pos - self.hi * neg
        else:
            value = self.hi * pos - self.lo * neg
        return float(value) if value.ndim == 0 else value

    def to_dict(self) -> Dict[str, object]:
        return {"lo": self.lo, "hi": self.hi, "orientation": self.orientation.value}

    @classmethod
    def utility_driver(cls, params: ModelParams) -> "Driver":
        """g(z) = b z+ - b' z-"""
        return cls(params.b, params.b_prime, Orientation.INF)

    @classmethod
    def cost_driver(cls, params: ModelParams) -> "Driver":
        """h(z) = a' z+ - a z-"""
        return cls(params.a_prime, params.a, Orientation.INF)

    @classmethod
    def cost_driver_reflected(cls, params: ModelParams) -> "Driver":
        """h~(z) = -h(-z) = a z+ - a' z-, so that -E^h[-X] = E^{h~}[X]"""
        return cls(params.a_prime, params.a, Orientation.SUP)


@dataclass(frozen=True)
class CallbackDriver:
    """General Lipschitz driver given as a scalar function with its Lipschitz constant"""
    fn: Callable[[float], float]
    kappa: float

    def __call__(self, z):
        value = np.vectorize(self.fn, otypes=[float])(np.asarray(z, dtype=float))
        return float(value) if value.ndim == 0 else value


AnyDriver = Union[Driver, CallbackDriver]


def driver_eval(d: AnyDriver, z):
    return d(z)


def convex_dual(d: Driver, xi):
    """Convex dual sup_z (g(z) - z xi) (Inf) or sup_z (z xi - g(z)) (Sup): 0 on [lo, hi], +inf outside"""
    xi = np.asarray(xi, dtype=float)
    value = np.where((xi >= d.lo) & (xi <= d.hi), 0.0, np.inf)
    return float(value) if value.ndim == 0 else value


def kernel_from_z(d: Driver, z, tol: float = 0.0):
    """Kernel in [lo, hi] attaining the driver at z; |z| <= tol resolves to lo"""
    if not isinstance(d, Driver):
        raise DomainError("Kernel extraction needs a piecewise-linear driver")
    z = np.asarray(z, dtype=float)
    if d.orientation is Orientation.INF:
        value = np.where(z > tol, d.lo, np.where(z < -tol, d.hi, d.lo))
    else:
        value = np.where(z > tol, d.hi, np.where(z < -tol, d.lo, d.lo))
    return float(value) if value.ndim == 0 else value


@dataclass(frozen=True)
class Lattice:
    """
    Binomial lattice with increments +/- sqrt(dt)

    Recombining lattices index level-k nodes by their number of up moves;
    path trees index them by the bit pattern of the path (last step in the
    lowest bit, up = 1) and support path-dependent payoffs.
    """
    n_steps: int
    dt: float
    recombining: bool = True

    def __post_init__(self):
        if self.n_steps < 1:
            raise DomainError("Lattice needs at least one step", {"n_steps": self.n_steps})
        if not self.dt > 0:
            raise DomainError("Lattice step must be positive", {"dt": self.dt})
        if not self.recombining and self.n_steps > MAX_TREE_STEPS:
            raise TooLarge("Path tree too deep", {"n_steps": self.n_steps, "max": MAX_TREE_STEPS})

    @property
    def sqrt_dt(self) -> float:
        return float(np.sqrt(self.dt))

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    def level_size(self, k: int) -> int:
        return k + 1 if self.recombining else 2 ** k

    @property
    def node_count(self) -> int:
        """Number of branching (non-terminal) nodes"""
        return sum(self.level_size(k) for k in range(self.n_steps))

    def children(self, k: int):
        """Indices of the (up, down) children at level k+1 of every level-k node"""
        idx = np.arange(self.level_size(k))
        if self.recombining:
            return idx + 1, idx
        return 2 * idx + 1, 2 * idx

    def brownian(self, k: int) -> np.ndarray:
        if self.recombining:
            return (2 * np.arange(k + 1) - k) * self.sqrt_dt
        ups = np.array([bin(i).count("1") for i in range(2 ** k)])
        return (2 * ups - k) * self.sqrt_dt

    def ancestor(self, k: int, m: int, idx) -> np.ndarray:
        """Level-k ancestor of level-m tree nodes (m >= k)"""
        if self.recombining:
            raise DomainError("Ancestors are only defined on path trees")
        return np.asarray(idx) >> (m - k)

    def increments(self) -> np.ndarray:
        """(2^n, n) matrix of +/- sqrt(dt) increments for every leaf of a path tree"""
        if self.recombining:
            raise DomainError("Leaf paths are only defined on path trees")
        n = self.n_steps
        leaves = np.arange(2 ** n)[:, None]
        bits = (leaves >> (n - 1 - np.arange(n))[None, :]) & 1
        return np.where(bits == 1, self.sqrt_dt, -self.sqrt_dt)

    def paths(self) -> np.ndarray:
        """(2^n, n+1) Brownian values along every leaf path of a path tree"""
        inc = self.increments()
        out = np.zeros((inc.shape[0], self.n_steps + 1))
        out[:, 1:] = np.cumsum(inc, axis=1)
        return out


@dataclass
class LatticeSolution:
    lattice: Lattice
    values: List[np.ndarray]
    z: List[np.ndarray]
    kernels: Optional[List[np.ndarray]] = None

    @property
    def root(self) -> float:
        return float(self.values[0][0])

    def conditional(self, k: int) -> np.ndarray:
        return self.values[k]


PAYOFFS: Dict[str, Callable[[Lattice], np.ndarray]] = {
    "terminal": lambda lat: lat.brownian(lat.n_steps),
    "ramp": lambda lat: np.maximum(lat.brownian(lat.n_steps), 0.0),
    "indicator": lambda lat: (lat.brownian(lat.n_steps) > 0).astype(float),
}


def _check_lattice(d: AnyDriver, lat: Lattice):
    if d.kappa * lat.sqrt_dt >= 1.0:
        raise LatticeTooCoarse("kappa * sqrt(dt) must be < 1",
                               {"kappa": d.kappa, "dt": lat.dt})


def _terminal(payoff, lat: Lattice) -> np.ndarray:
    values = payoff(lat) if callable(payoff) else payoff
    values = np.asarray(values, dtype=float)
    if values.shape != (lat.level_size(lat.n_steps),):
        raise DomainError("Payoff does not match the terminal level",
                          {"expected": lat.level_size(lat.n_steps), "got": list(values.shape)})
    return values


def lattice_solve(d: AnyDriver, payoff, lat: Lattice) -> LatticeSolution:
    """Backward induction Y = (Y_up + Y_down)/2 + dt g(Z), Z = (Y_up - Y_down)/(2 sqrt(dt))"""
    _check_lattice(d, lat)
    values: List[np.ndarray] = [None] * (lat.n_steps + 1)
    zs: List[np.ndarray] = [None] * lat.n_steps
    values[lat.n_steps] = _terminal(payoff, lat)
    s = lat.sqrt_dt
    for k in range(lat.n_steps - 1, -1, -1):
        up, dn = lat.children(k)
        y_up, y_dn = values[k + 1][up], values[k + 1][dn]
        z = (y_up - y_dn) / (2.0 * s)
        values[k] = 0.5 * (y_up + y_dn) + lat.dt * np.asarray(d(z), dtype=float)
        zs[k] = z
    kernels = [np.atleast_1d(kernel_from_z(d, z)) for z in zs] if isinstance(d, Driver) else None
    return LatticeSolution(lattice=lat, values=values, z=zs, kernels=kernels)


def gexp_eval(d: AnyDriver, payoff, lat: Lattice, at_step: Optional[int] = None):
    """Root value, or the conditional g-expectation on every node of level at_step"""
    solution = lattice_solve(d, payoff, lat)
    if at_step is None:
        return solution.root
    return solution.conditional(at_step)


def prior_enumerate(d: Driver, payoff, lat: Lattice, budget: int = ENUMERATION_BUDGET) -> float:
    """
    Exact min (Inf) or max (Sup) of E^{P^xi}[payoff] over every per-node
    endpoint assignment, branch weights (1 +/- xi sqrt(dt))/2
    """
    if not isinstance(d, Driver):
        raise DomainError("Prior enumeration needs a piecewise-linear driver")
    _check_lattice(d, lat)
    terminal = _terminal(payoff, lat)
    m = lat.node_count
    if 2 ** m > budget:
        raise TooLarge("Too many endpoint assignments", {"nodes": m, "budget": budget})

    n_assign = 2 ** m
    bits = ((np.arange(n_assign)[:, None] >> np.arange(m)[None, :]) & 1).astype(bool)
    s = lat.sqrt_dt
    probs = np.ones((n_assign, 1))
    offset = 0
    for k in range(lat.n_steps):
        size = lat.level_size(k)
        xi = np.where(bits[:, offset:offset + size], d.hi, d.lo)
        offset += size
        p_up = probs * (1.0 + xi * s) / 2.0
        p_dn = probs * (1.0 - xi * s) / 2.0
        nxt = np.zeros((n_assign, lat.level_size(k + 1)))
        if lat.recombining:
            nxt[:, 1:] += p_up
            nxt[:, :-1] += p_dn
        else:
            nxt[:, 1::2] = p_up
            nxt[:, 0::2] = p_dn
        probs = nxt

    expectations = probs @ terminal
    value = expectations.min() if d.orientation is Orientation.INF else expectations.max()
    logger.debug(f"Enumerated {n_assign} priors over {m} nodes")
    return float(value)
