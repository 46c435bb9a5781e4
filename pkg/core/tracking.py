#!/usr/bin/env python3
"""
Brownian paths, Girsanov densities, level processes and the consumption plan tracking a level
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import DomainError, KernelOutOfBounds, NonPositiveK, NotMonotone
from core.model import DerivedConstants, ModelParams

logger = logging.getLogger(__name__)

BLOCK_SIZE = 512

# Independent random streams under one root seed
STREAM_PATHS = 0
STREAM_OUTER = 1
STREAM_INNER = 2
STREAM_REPLICA = 3

Beta = Union[float, np.ndarray]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_N = T"""
    horizon: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 0 or self.horizon < 0:
            raise DomainError("Grid needs a non-negative horizon and step count",
                              {"horizon": self.horizon, "n_steps": self.n_steps})
        if self.n_steps == 0 and self.horizon != 0:
            raise DomainError("A single-node grid has horizon 0")
        if self.n_steps > 0 and not self.horizon > 0:
            raise DomainError("Grid horizon must be positive")

    @classmethod
    def uniform(cls, horizon: float, dt: float) -> "TimeGrid":
        if not dt > 0:
            raise DomainError("dt must be positive", {"dt": dt})
        n = int(round(horizon / dt))
        return cls(horizon=n * dt, n_steps=n)

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps if self.n_steps else 0.0

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass
class GridPath:
    """One simulated trajectory; C holds cumulative consumption with C_{0-} = 0 implicit"""
    grid: TimeGrid
    B: np.ndarray
    eps: Dict[str, np.ndarray]
    L: np.ndarray
    Y: np.ndarray
    C: np.ndarray
    extra: Dict[str, np.ndarray] = field(default_factory=dict)

    def rows(self, columns: Sequence[str]) -> List[List[float]]:
        data = {"t": self.grid.times, "B": self.B, "L": self.L, "Y": self.Y, "C": self.C}
        data.update({f"eps_{name}": values for name, values in self.eps.items()})
        data.update(self.extra)
        return [[float(data[col][k]) for col in columns] for k in range(self.grid.n_steps + 1)]


# --- random streams ---------------------------------------------------------

def block_rng(seed: int, stream: int, *key: int) -> np.random.Generator:
    """Counter-based generator for one block; independent of how blocks are scheduled"""
    ss = np.random.SeedSequence(seed, spawn_key=(stream, *key))
    return np.random.Generator(np.random.Philox(ss))


def block_normals(rng: np.random.Generator, rows: int, n_steps: int, antithetic: bool = False) -> np.ndarray:
    if not antithetic:
        return rng.standard_normal((rows, n_steps))
    if rows % 2:
        raise DomainError("Antithetic blocks need an even number of rows", {"rows": rows})
    half = rng.standard_normal((rows // 2, n_steps))
    out = np.empty((rows, n_steps))
    out[0::2] = half
    out[1::2] = -half
    return out


def block_layout(n_paths: int, block_size: int = BLOCK_SIZE) -> List[Tuple[int, int]]:
    """(block index, rows) for every block covering n_paths"""
    n_blocks = -(-n_paths // block_size)
    return [(i, min(block_size, n_paths - i * block_size)) for i in range(n_blocks)]


def simulate_brownian(grid: TimeGrid, seed: int, n_paths: int = 1, antithetic: bool = False,
                      stream: int = STREAM_PATHS, block_size: int = BLOCK_SIZE) -> np.ndarray:
    """Brownian values (n_paths, N+1) with B_0 = 0; path i depends only on (seed, stream, i)"""
    out = np.zeros((n_paths, grid.n_steps + 1))
    for block, rows in block_layout(n_paths, block_size):
        normals = block_normals(block_rng(seed, stream, block), rows, grid.n_steps, antithetic)
        start = block * block_size
        out[start:start + rows, 1:] = np.cumsum(normals * math.sqrt(grid.dt), axis=1)
    return out


# --- kernels ----------------------------------------------------------------

@dataclass(frozen=True)
class ConstantKernel:
    value: float

    @property
    def constant(self) -> Optional[float]:
        return self.value

    def values(self, k: int, t: float, b: np.ndarray) -> np.ndarray:
        return np.full(np.shape(b), self.value)

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "constant", "value": self.value}


@dataclass(frozen=True)
class SwitchingKernel:
    """Deterministic piecewise-constant kernel; levels[i] applies from switch_times[i-1] on"""
    switch_times: Tuple[float, ...]
    levels: Tuple[float, ...]

    def __post_init__(self):
        if len(self.levels) != len(self.switch_times) + 1:
            raise DomainError("Switching kernel needs one more level than switch times")

    @property
    def constant(self) -> Optional[float]:
        return None

    def values(self, k: int, t: float, b: np.ndarray) -> np.ndarray:
        level = self.levels[int(np.searchsorted(self.switch_times, t, side="right"))]
        return np.full(np.shape(b), level)

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "switching", "switchTimes": list(self.switch_times), "levels": list(self.levels)}


@dataclass(frozen=True)
class SignKernel:
    """State-dependent kernel: `positive` where B_t > 0, `negative` otherwise"""
    positive: float
    negative: float

    @property
    def constant(self) -> Optional[float]:
        return None

    def values(self, k: int, t: float, b: np.ndarray) -> np.ndarray:
        return np.where(np.asarray(b) > 0, self.positive, self.negative)

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "sign", "positive": self.positive, "negative": self.negative}


Kernel = Union[ConstantKernel, SwitchingKernel, SignKernel]


def kernel_from_dict(data: Dict[str, Any]) -> Kernel:
    kind = data.get("type")
    if kind == "constant":
        return ConstantKernel(float(data["value"]))
    if kind == "switching":
        return SwitchingKernel(tuple(data["switchTimes"]), tuple(data["levels"]))
    if kind == "sign":
        return SignKernel(float(data["positive"]), float(data["negative"]))
    raise DomainError(f"Unknown kernel type: {kind}")


def candidate_kernels(lo: float, hi: float, n: int, seed: int, horizon: float) -> List[Kernel]:
    """Endpoint constants, sign-of-B strategies, then random switching kernels"""
    mid = 0.5 * (lo + hi)
    choices = (lo, mid, hi)
    fixed: List[Kernel] = [
        ConstantKernel(lo), ConstantKernel(mid), ConstantKernel(hi),
        SignKernel(hi, lo), SignKernel(lo, hi),
    ]
    rng = np.random.default_rng(seed)
    out = fixed[:n]
    while len(out) < n:
        n_switch = int(rng.integers(1, 5))
        times = tuple(float(t) for t in np.sort(rng.uniform(0.0, horizon, n_switch)))
        levels = tuple(float(choices[i]) for i in rng.integers(0, 3, n_switch + 1))
        out.append(SwitchingKernel(times, levels))
    return out


def check_kernel_values(values: np.ndarray, bounds: Optional[Tuple[float, float]], tol: float = 1e-12):
    if bounds is None:
        return
    lo, hi = bounds
    if np.any(values < lo - tol) or np.any(values > hi + tol):
        raise KernelOutOfBounds("Kernel leaves its interval",
                                {"lo": lo, "hi": hi, "min": float(np.min(values)), "max": float(np.max(values))})


def drifted_brownian(grid: TimeGrid, normals: np.ndarray, kernel: Kernel,
                     bounds: Optional[Tuple[float, float]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Path of B under P^xi, i.e. dB = xi dt + dW, with left-point kernel values

    Returns (B, xi) with shapes (rows, N+1) and (rows, N).
    """
    rows, n = normals.shape
    dt = grid.dt
    dw = normals * math.sqrt(dt)
    B = np.zeros((rows, n + 1))
    if kernel.constant is not None:
        xi = np.full((rows, n), kernel.constant)
        check_kernel_values(xi, bounds)
        B[:, 1:] = np.cumsum(dw + kernel.constant * dt, axis=1)
        return B, xi
    xi = np.empty((rows, n))
    times = grid.times
    for k in range(n):
        xi[:, k] = kernel.values(k, times[k], B[:, k])
        B[:, k + 1] = B[:, k] + xi[:, k] * dt + dw[:, k]
    check_kernel_values(xi, bounds)
    return B, xi


def girsanov_density(B: np.ndarray, xi, dt: float, bounds: Optional[Tuple[float, float]] = None) -> np.ndarray:
    """eps^xi on the grid: exp(sum xi dB - 1/2 sum xi^2 dt), eps_0 = 1"""
    B = np.asarray(B, dtype=float)
    dB = np.diff(B, axis=-1)
    xi = np.broadcast_to(np.asarray(xi, dtype=float), dB.shape)
    check_kernel_values(xi, bounds)
    log_eps = np.zeros(B.shape)
    log_eps[..., 1:] = np.cumsum(xi * dB - 0.5 * xi ** 2 * dt, axis=-1)
    return np.exp(log_eps)


def level_path_LK(B: np.ndarray, times: np.ndarray, K: float, derived: DerivedConstants) -> np.ndarray:
    """L_t = K^{1/(alpha-1)} exp(theta B_t - lambda t)"""
    if not K > 0:
        raise NonPositiveK("K must be positive", {"K": K})
    alpha = derived.params.alpha
    return K ** (1.0 / (alpha - 1.0)) * np.exp(derived.theta * np.asarray(B) - derived.lam * np.asarray(times))


def running_sup(values: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Prefix maximum along the last axis, optionally of values * weights"""
    values = np.asarray(values, dtype=float)
    if weights is not None:
        values = values * weights
    return np.maximum.accumulate(values, axis=-1)


def integrated_decay(grid: TimeGrid, beta: Beta) -> Tuple[np.ndarray, np.ndarray]:
    """(int_0^{t_k} beta, beta_k) per node; time-dependent beta integrates by the trapezoid rule"""
    times = grid.times
    if np.ndim(beta) == 0:
        if not beta > 0:
            raise DomainError("beta must be positive", {"beta": float(beta)})
        return beta * times, np.full(times.shape, float(beta))
    beta = np.asarray(beta, dtype=float)
    if beta.shape != times.shape or np.any(beta <= 0):
        raise DomainError("Time-dependent beta needs one positive value per node")
    cum = np.zeros(times.shape)
    cum[1:] = np.cumsum(0.5 * (beta[:-1] + beta[1:]) * grid.dt)
    return cum, beta


@dataclass
class TrackResult:
    Y: np.ndarray
    C: np.ndarray
    dC: np.ndarray


def track(L: np.ndarray, grid: TimeGrid, eta: float, beta: Beta) -> TrackResult:
    """
    Minimal plan keeping Y >= L

    Y_t = e^{-B_t}(eta v sup_{s<=t} L_s e^{B_s}) with B_t = int_0^t beta and
    dC_t = e^{-B_t} dCbar_t / beta_t where Cbar = (sup L e^{B} - eta)+.
    """
    L = np.asarray(L, dtype=float)
    if not np.all(np.isfinite(L)) or np.any(L < 0):
        raise DomainError("Level must be finite and non-negative")
    cum, beta_k = integrated_decay(grid, beta)
    growth = np.exp(cum)
    y_bar = np.maximum(eta, running_sup(L, growth))
    c_bar = y_bar - eta
    d_c_bar = np.diff(c_bar, axis=-1, prepend=0.0)
    dC = d_c_bar / (growth * beta_k)
    return TrackResult(Y=y_bar / growth, C=np.cumsum(dC, axis=-1), dC=dC)


def satisfaction_from_consumption(C: np.ndarray, grid: TimeGrid, eta: float, beta: Beta) -> np.ndarray:
    """Y_k = e^{-(B_k - B_{k-1})} Y_{k-1} + beta_k dC_k with Y_{0-} = eta"""
    C = np.asarray(C, dtype=float)
    dC = np.diff(C, axis=-1, prepend=0.0)
    scale = max(1.0, float(np.max(np.abs(C)))) if C.size else 1.0
    if np.any(dC < -1e-12 * scale):
        raise NotMonotone("Consumption must be nondecreasing with C_0 >= 0")
    cum, beta_k = integrated_decay(grid, beta)
    growth = np.exp(cum)
    return (eta + np.cumsum(beta_k * growth * dC, axis=-1)) / growth


def plan_utility(Y: np.ndarray, grid: TimeGrid, params: ModelParams) -> np.ndarray:
    """int_0^T u(t, Y_t) dt with Y decaying at rate beta between nodes"""
    rate = params.delta + params.alpha * params.beta
    weight = (1.0 - math.exp(-rate * grid.dt)) / (params.alpha * rate)
    t = grid.times[:-1]
    return np.sum(np.asarray(Y)[..., :-1] ** params.alpha * np.exp(-params.delta * t), axis=-1) * weight


def plan_cost(dC: np.ndarray, grid: TimeGrid, r: float) -> np.ndarray:
    """Stieltjes sum of e^{-rt} dC including the jump at 0"""
    return np.sum(np.asarray(dC) * np.exp(-r * grid.times), axis=-1)


def plan_tilde_cost(Y: np.ndarray, grid: TimeGrid, r: float, beta: float) -> np.ndarray:
    """int_0^T e^{-rt} Y_t dt with Y decaying at rate beta between nodes"""
    weight = (1.0 - math.exp(-(r + beta) * grid.dt)) / (r + beta)
    t = grid.times[:-1]
    return np.sum(np.asarray(Y)[..., :-1] * np.exp(-r * t), axis=-1) * weight


def simulate_optimal_paths(derived: DerivedConstants, grid: TimeGrid, seed: int, n_paths: int,
                           kernels: Iterable[str] = ("a", "b")) -> List[GridPath]:
    """Optimal plans along P0 Brownian paths, with the densities for the named kernels"""
    p = derived.params
    B = simulate_brownian(grid, seed, n_paths)
    L = level_path_LK(B, grid.times, derived.K, derived)
    result = track(L, grid, p.eta, p.beta)
    kernel_values = {"a": p.a, "b": p.b, "aPrime": p.a_prime, "bPrime": p.b_prime}
    paths = []
    for i in range(n_paths):
        eps = {name: girsanov_density(B[i], kernel_values[name], grid.dt) for name in kernels}
        paths.append(GridPath(grid=grid, B=B[i], eps=eps, L=L[i], Y=result.Y[i], C=result.C[i]))
    logger.info(f"Simulated {n_paths} optimal paths over {grid.n_steps} steps")
    return paths
