#!/usr/bin/env python3
"""
Test script for the closed-form stationary solution, statics and abstention plans
"""
import sys
from pathlib import Path
sys.path.append(str(Path(__file__).parent.parent))

import math

import numpy as np

from core.errors import RegionEmpty
from core.model import ModelParams, Regime, derive, validate
from core.stationary import (
    abstention_multiplier, abstention_solve, comparative_statics, expected_cost_closed,
    expected_utility_closed, kink_gaps, lagrange_K, portfolio_pi, present_value, solve, spread_case,
    tilde_psi_closed
)
from tests.test_model import random_standard_params

P0 = dict(r=0.02, sigma=0.2, aPrime=-0.10, a=0.05, b=0.15, bPrime=0.30,
          delta=0.30, alpha=0.5, beta=0.1, eta=1.0, w=5.0)
CASE1 = dict(P0, a=0.1, b=0.1, delta=0.05)
CASE2 = dict(P0, a=0.1, b=0.1)


def params(base=P0, **changes) -> ModelParams:
    return ModelParams.from_dict({**base, **changes})


def test_budget_binds():
    print("🧪 Testing the Lagrange constant...")
    derived = derive(validate(params()))
    assert abs(expected_cost_closed(1.0, derived.K, derived) / 5.0 - 1.0) < 1e-12
    threshold = 1.0 / (0.1 * (derived.x_plus_a - 1.0))
    for w in (0.5 * threshold, 0.99 * threshold, threshold, 3.0, 50.0):
        K = lagrange_K(w, 1.0, derived)
        assert abs(expected_cost_closed(1.0, K, derived) / w - 1.0) < 1e-10, w
    assert max(kink_gaps(derived.K, derived).values()) < 1e-10
    print("✅ Lagrange constant test completed!")


def test_cost_and_tilde_relation():
    print("🧪 Testing psi = (1 + r/beta) psi~ - eta/beta on both branches...")
    derived = derive(validate(params()))
    p = derived.params
    etas = np.array([0.2, 1.0, derived.kink, 2.0, 5.0])
    for xi in ("a", "aPrime"):
        psi = expected_cost_closed(etas, derived.K, derived, xi)
        tilde = tilde_psi_closed(etas, derived.K, derived, xi)
        assert np.allclose(psi, (1 + p.r / p.beta) * tilde - etas / p.beta, rtol=1e-12)
    # the more pessimistic cost prior a >= a' costs more
    assert expected_cost_closed(1.0, derived.K, derived, "aPrime") < expected_cost_closed(1.0, derived.K, derived)
    print("✅ Cost relation test completed!")


def test_utility_continuity():
    print("🧪 Testing utility across the kink...")
    derived = derive(validate(params()))
    k = derived.kink
    below = expected_utility_closed(k * (1 - 1e-9), derived.K, derived)
    above = expected_utility_closed(k * (1 + 1e-9), derived.K, derived)
    assert abs(above - below) / below < 1e-7
    assert expected_utility_closed(3.0, derived.K, derived) > expected_utility_closed(2.0, derived.K, derived)
    print("✅ Utility continuity test completed!")


def test_solve_p0_and_present_value():
    print("🧪 Testing solve at P0...")
    solution = solve(validate(params(mu=0.08)))
    assert solution.regime is Regime.STANDARD
    assert abs(solution.pi - 23.7526) < 1e-3
    assert abs(solution.psi - 5.0) < 1e-10
    report = solution.to_dict()
    assert report["regime"] == "Standard" and abs(report["riskPremium"] - 0.3) < 1e-12
    derived = solution.derived
    assert abs(present_value(0.0, 0.0, 1.0, derived) - 5.0) < 1e-10
    assert portfolio_pi(derived) == solution.pi
    print("✅ Solve test completed!")


def test_abstention_case2():
    print("🧪 Testing abstention case 2...")
    vp = validate(params(CASE2))
    assert vp.regime is Regime.ABSTENTION_CASE2
    plan = abstention_solve(vp)
    assert plan.initial_gulp == 5.0
    assert plan.cost_closed() == 5.0
    assert abs(plan.M - plan.K * 0.1 / (0.3 + 0.05)) < 1e-15
    solution = solve(vp)
    assert solution.pi == 0.0 and solution.to_dict()["initialGulp"] == 5.0
    print("✅ Abstention case 2 test completed!")


def test_abstention_case1_round_trip():
    print("🧪 Testing abstention case 1 cost round trip...")
    vp = validate(params(CASE1))
    assert vp.regime is Regime.ABSTENTION_CASE1
    for w in (10.0, 2.0):
        plan = abstention_solve(vp, w=w)
        assert abs(plan.threshold - 5.0) < 1e-12
        assert abs(plan.cost_closed() - w) < 1e-8, plan.cost_closed()
        assert abs(plan.cost_quadrature() - w) < 1e-8, plan.cost_quadrature()
        assert abs(plan.M - abstention_multiplier(plan.K, plan.params)) < 1e-15
    late = abstention_solve(vp, w=2.0)
    assert late.t_star > 0 and late.initial_gulp == 0.0
    assert abs(float(late.y_bar(late.t_star)) - 1.0) < 1e-12
    early = abstention_solve(vp, w=10.0)
    assert early.t_star == 0.0 and abs(early.initial_gulp - (early.L0 - 1.0) / 0.1) < 1e-12
    print("✅ Abstention case 1 test completed!")


def test_statics_sigma_and_risk_aversion():
    print("🧪 Testing pi against sigma and risk aversion...")
    for quantity in ("sigma", "riskAversion"):
        report = comparative_statics(params(), quantity)
        assert report.observed == "decreasing", report.to_dict()
        assert report.passed and len(report.values) == 20
        assert all(np.diff(report.values) > 0)
    print("✅ Sigma/risk-aversion statics test completed!")


def test_statics_spread_cases():
    print("🧪 Testing pi against the spread in all three cases...")
    report = comparative_statics(params(), "spread", expect_case="iii")
    assert report.case == "iii" and report.passed
    assert abs(report.turning_point - math.sqrt(1.84)) < 1e-12
    assert abs(report.observed_turning_point - report.turning_point) <= report.grid_spacing

    case_i = params(delta=0.05)
    assert spread_case(case_i)["case"] == "i"
    assert comparative_statics(case_i, "spread").observed == "increasing"

    case_ii = params(alpha=0.8)
    assert spread_case(case_ii)["case"] == "ii"
    assert comparative_statics(case_ii, "spread").observed == "decreasing"

    try:
        comparative_statics(params(), "spread", expect_case="i")
        raise AssertionError("expected RegionEmpty")
    except RegionEmpty:
        print("   ✅ mismatched case rejected")
    try:
        comparative_statics(params(CASE2), "sigma")
        raise AssertionError("expected RegionEmpty")
    except RegionEmpty:
        print("   ✅ overlapping priors rejected")
    print("✅ Spread statics test completed!")



def test_solve_abstention_case1():
    print("🧪 Testing solve for case 1 over an infinite horizon...")
    solution = solve(validate(params(CASE1)))
    assert solution.regime is Regime.ABSTENTION_CASE1 and solution.pi == 0.0
    # w sits on the threshold: L0 = eta, Y_t = e^{-0.06 t} and phi = 2 / (0.05 + 0.03)
    assert math.isfinite(solution.phi)
    assert abs(solution.phi - 25.0) < 1e-8, solution.phi
    assert abs(solution.psi - 5.0) < 1e-12
    plan = abstention_solve(validate(params(CASE1)))
    assert abs(plan.utility_quadrature(400.0) - solution.phi) < 1e-8
    assert np.all(np.isfinite(plan.satisfaction(np.array([0.0, 1e3, 1e5]))))
    print("✅ Case 1 solve test completed!")


def test_budget_round_trip_random():
    print("🧪 Testing the budget round trip over random parameters, wealth and eta...")
    rng = np.random.default_rng(201)
    branches = {"small": 0, "large": 0}
    for _ in range(1000):
        derived = derive(validate(random_standard_params(rng)))
        w = float(np.exp(rng.uniform(np.log(0.01), np.log(50.0))))
        eta = float(rng.uniform(0.2, 3.0))
        K = lagrange_K(w, eta, derived)
        cost = expected_cost_closed(eta, K, derived)
        assert abs(cost / w - 1.0) <= 1e-10, (derived.params.to_dict(), w, eta, cost)
        branches["small" if w < eta / (derived.params.beta * (derived.x_plus_a - 1.0)) else "large"] += 1
    assert min(branches.values()) >= 10, branches
    print(f"   branches visited: {branches}")
    print("✅ Random budget round trip test completed!")


def test_pi_independent_of_wealth_and_eta():
    print("🧪 Testing that pi ignores w and eta...")
    vp = validate(params())
    base = derive(vp)
    for w, eta in ((0.1, 1.0), (50.0, 1.0), (5.0, 0.2), (5.0, 4.0), (0.01, 3.0)):
        other = derive(vp, w=w, eta=eta)
        assert other.pi == base.pi
        assert abs(expected_cost_closed(eta, other.K, other) / w - 1.0) < 1e-10
    # doubling sigma halves pi
    assert abs(derive(validate(params(sigma=0.4))).pi * 2.0 - base.pi) < 1e-12 * base.pi
    print("✅ Portfolio independence test completed!")


if __name__ == "__main__":
    test_budget_binds()
    test_cost_and_tilde_relation()
    test_utility_continuity()
    test_solve_p0_and_present_value()
    test_abstention_case2()
    test_abstention_case1_round_trip()
    test_statics_sigma_and_risk_aversion()
    test_statics_spread_cases()
    test_solve_abstention_case1()
    test_budget_round_trip_random()
    test_pi_independent_of_wealth_and_eta()
