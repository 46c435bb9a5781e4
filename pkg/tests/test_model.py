#!/usr/bin/env python3
"""
Test script for parameter validation, regimes and derived constants
"""
import sys
from pathlib import Path
sys.path.append(str(Path(__file__).parent.parent))

import math

import numpy as np

from core.errors import ConfigError, DomainError, IllPosed, NonPositive, NoRealRoot, OrderingViolation
from core.model import (
    ModelParams, Regime, derive, felicity, felicity_deriv, quad_root_plus, theta_lambda, validate
)

P0 = dict(r=0.02, sigma=0.2, aPrime=-0.10, a=0.05, b=0.15, bPrime=0.30,
          delta=0.30, alpha=0.5, beta=0.1, eta=1.0, w=5.0)


def params(**changes) -> ModelParams:
    data = dict(P0)
    data.update(changes)
    return ModelParams.from_dict(data)


def expect(error_cls, fn, *args):
    try:
        fn(*args)
    except error_cls as e:
        return e
    raise AssertionError(f"expected {error_cls.__name__}")


def test_p0_constants():
    print("🧪 Testing derived constants at P0...")
    derived = derive(validate(params()))
    assert derived.regime is Regime.STANDARD
    assert abs(derived.theta - 0.2) < 1e-12
    assert abs(derived.lam - 0.58) < 1e-12
    assert abs(derived.delta_hat + 0.46) < 1e-12
    assert abs(derived.x_plus_a - 23.7526) < 1e-3
    assert abs(derived.x_plus_alpha_b - 46.505) < 1e-2
    assert derived.x_plus_a_prime > derived.x_plus_a
    assert abs(derived.K - 0.8342) < 1e-3
    assert abs(derived.kink - 1.43685) < 1e-4
    assert abs(derived.pi - 23.7526) < 1e-3
    print(f"   K={derived.K:.6f}, pi={derived.pi:.4f}")
    print("✅ P0 constants test completed!")


def test_quadratic_roots():
    print("🧪 Testing largest quadratic root...")
    assert abs(quad_root_plus(1.0, -3.0, 2.0) - 2.0) < 1e-15
    assert abs(quad_root_plus(1.0, 3.0, 2.0) + 1.0) < 1e-15
    # tiny root next to a huge one keeps full relative precision
    small = quad_root_plus(1.0, 1e8, -1.0)
    assert abs(small / 1e-8 - 1.0) < 1e-12
    expect(NoRealRoot, quad_root_plus, 1.0, 0.0, 1.0)
    expect(DomainError, quad_root_plus, 0.0, 1.0, 1.0)
    print("✅ Quadratic root test completed!")


def test_validation_errors():
    print("🧪 Testing validation errors...")
    expect(NonPositive, validate, params(sigma=0.0))
    expect(NonPositive, validate, params(w=-1.0))
    expect(NonPositive, validate, params(eta=-0.1))
    expect(DomainError, validate, params(alpha=1.0))
    expect(OrderingViolation, validate, params(aPrime=0.2))
    expect(OrderingViolation, validate, params(bPrime=0.1))
    error = expect(IllPosed, validate, params(delta=0.01))
    assert error.exit_code == 2
    assert "delta" in error.message
    expect(ConfigError, ModelParams.from_dict, {**P0, "gamma": 1.0})
    print("✅ Validation errors test completed!")


def test_regimes():
    print("🧪 Testing regime detection...")
    assert validate(params()).regime is Regime.STANDARD
    assert validate(params(a=0.1, b=0.1)).regime is Regime.ABSTENTION_CASE2
    assert validate(params(a=0.1, b=0.1, delta=0.05)).regime is Regime.ABSTENTION_CASE1
    assert Regime.ABSTENTION_CASE1.is_abstention and not Regime.STANDARD.is_abstention
    expect(DomainError, derive, validate(params(a=0.1, b=0.1)))
    print("✅ Regime detection test completed!")


def test_theta_lambda_and_risk_premium():
    print("🧪 Testing theta, lambda and risk premium...")
    p = params(mu=0.08)
    theta, lam = theta_lambda(p)
    assert abs(theta - 0.2) < 1e-12 and abs(lam - 0.58) < 1e-12
    assert abs(p.risk_premium - 0.3) < 1e-12
    assert params().risk_premium is None
    assert "mu" not in params().to_dict()
    print("✅ Theta/lambda test completed!")


def test_felicity():
    print("🧪 Testing felicity and marginal utility...")
    p = params()
    assert abs(felicity(0.0, 4.0, p) - 4.0) < 1e-12
    assert abs(felicity(1.0, 4.0, p) - 4.0 * math.exp(-0.3)) < 1e-12
    assert felicity_deriv(0.0, 0.0, p) == math.inf
    assert abs(felicity_deriv(0.0, 4.0, p) - 0.5) < 1e-12
    expect(DomainError, felicity, 0.0, -1.0, p)
    print("✅ Felicity test completed!")



def random_standard_params(rng) -> ModelParams:
    """A valid parameter set with disjoint prior intervals"""
    alpha = float(rng.uniform(0.2, 0.8))
    r = float(rng.uniform(0.0, 0.05))
    a = float(rng.uniform(-0.2, 0.2))
    b = a + float(rng.uniform(0.05, 0.3))
    bound = alpha * r + alpha * (a - b) ** 2 / (2 * (1 - alpha))
    return ModelParams(
        r=r, sigma=float(rng.uniform(0.1, 0.5)),
        aPrime=a - float(rng.uniform(0.0, 0.2)), a=a, b=b, bPrime=b + float(rng.uniform(0.0, 0.2)),
        delta=bound + float(rng.uniform(0.01, 0.2)), alpha=alpha, beta=float(rng.uniform(0.02, 0.5)),
        eta=float(rng.uniform(0.2, 3.0)), w=float(rng.uniform(0.5, 50.0)),
    )


def test_roots_exceed_one_over_random_parameters():
    print("🧪 Testing x+ > 1 over random valid parameters...")
    rng = np.random.default_rng(101)
    for _ in range(1000):
        derived = derive(validate(random_standard_params(rng)))
        assert derived.x_plus_a > 1.0 and derived.x_plus_a_prime > 1.0 and derived.x_plus_alpha_b > 1.0
        assert derived.x_plus_a_prime >= derived.x_plus_a
    print("✅ Root bound test completed!")


def test_quadratic_root_residuals():
    print("🧪 Testing quadratic root residuals...")
    rng = np.random.default_rng(102)
    for _ in range(1000):
        A = float(rng.uniform(1e-3, 1.0))
        B = float(rng.uniform(-5.0, 5.0))
        C = float(rng.uniform(-10.0, 0.0))
        x = quad_root_plus(A, B, C)
        assert abs(A * x * x + B * x + C) <= 1e-10 * max(1.0, abs(C)), (A, B, C, x)
        assert x >= 0.0
    print("✅ Root residual test completed!")


def test_felicity_concave():
    print("🧪 Testing concavity of felicity...")
    rng = np.random.default_rng(103)
    for _ in range(200):
        p = params(alpha=float(rng.uniform(0.05, 0.95)), delta=float(rng.uniform(0.3, 1.0)))
        t = float(rng.uniform(0.0, 10.0))
        y1, y2 = rng.uniform(0.0, 20.0, size=2)
        lam = float(rng.uniform())
        mixed = felicity(t, lam * y1 + (1 - lam) * y2, p)
        chord = lam * felicity(t, y1, p) + (1 - lam) * felicity(t, y2, p)
        assert mixed >= chord - 1e-12 * max(1.0, abs(chord))
    print("✅ Felicity concavity test completed!")


if __name__ == "__main__":
    test_p0_constants()
    test_quadratic_roots()
    test_validation_errors()
    test_regimes()
    test_theta_lambda_and_risk_premium()
    test_felicity()
    test_roots_exceed_one_over_random_parameters()
    test_quadratic_root_residuals()
    test_felicity_concave()
