"""Acceptance criteria 1-9. Run with ``pytest tests/test_acceptance.py -s`` to see one line per criterion."""

import math
import time

import numpy as np
import pytest

from olcp.experiments import ScenarioConfig, generate_scenario, ols_fit, run_experiment
from olcp.hedge import (
    AdaHedge,
    ConstrainedHedge,
    feasibility_diagnostic,
    queue_bound,
    size_regret_bound,
    violation_bound,
)
from olcp.localization import silverman_bandwidth
from olcp.online import OLCP
from olcp.quantiles import WeightedScoreDistribution, lower_quantile

from oracles import brute_lower_quantile, simplex_grid_minimax_np


def report(n, ok, detail):
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def identity_runs():
    """200 OLCP runs over random scenarios and step sizes, 500 streamed test points each."""
    rng = np.random.default_rng(20240601)
    train, T_test, R = 200, 500, 200
    h = silverman_bandwidth(1, R)
    start = time.perf_counter()
    ledgers = []
    for _ in range(200):
        scenario = str(rng.choice(["A", "B", "C"]))
        gamma = float(rng.choice([0.005, 0.05, 0.5]))
        cfg = ScenarioConfig(scenario, T=train + T_test, train_len=train, R=R)
        X, Y = generate_scenario(cfg, rng)
        slope, b = ols_fit(X[:train], Y[:train])
        m = OLCP(0.1, R, 1, gamma, h)
        for x, y in zip(X[train:], Y[train:]):
            m.step(0, [x], slope * x + b, y)
        ledgers.append(m.ledger)
    return ledgers, time.perf_counter() - start


def test_criterion_1_coverage_identity(identity_runs):
    ledgers, elapsed = identity_runs
    worst = max(led.max_abs_residual for led in ledgers)
    ok = worst <= 1e-9 and elapsed < 30
    report(1, ok, f"max prefix residual {worst:.2e} over {len(ledgers)} runs, {elapsed:.1f}s")


def _scenario(scenario, methods):
    start = time.perf_counter()
    res = run_experiment(ScenarioConfig(scenario, reps=20, seed=0), methods)
    return res.rows, time.perf_counter() - start


def test_criterion_2_scenario_a_coverage():
    rows, elapsed = _scenario("A", ["OLCP", "OLCP-Hedge"])
    covs = {m: rows[m].coverage_mean for m in rows}
    ok = all(abs(c - 0.9) <= 0.015 for c in covs.values()) and elapsed < 120
    detail = ", ".join(f"{m} coverage {c:.4f}" for m, c in covs.items())
    report(2, ok, f"{detail}; {elapsed:.1f}s")


def test_criterion_3_scenario_b_ordering():
    rows, _ = _scenario("B", ["ACI", "OLCP-Hedge"])
    h, a = rows["OLCP-Hedge"], rows["ACI"]
    ok = h.size_mean < a.size_mean and abs(h.coverage_mean - 0.9) <= 0.015
    report(3, ok, f"OLCP-Hedge size {h.size_mean:.3f} vs ACI {a.size_mean:.3f}, "
                  f"OLCP-Hedge coverage {h.coverage_mean:.4f}")


def test_criterion_4_scenario_c_ordering():
    rows, _ = _scenario("C", ["ACI", "OLCP"])
    o, a = rows["OLCP"], rows["ACI"]
    ratio = o.size_mean / a.size_mean
    ok = ratio <= 0.90 and abs(o.coverage_mean - 0.9) <= 0.02
    report(4, ok, f"OLCP/ACI size ratio {ratio:.3f}, OLCP coverage {o.coverage_mean:.4f}")


def test_criterion_5_adahedge_regret():
    rng = np.random.default_rng(5)
    start = time.perf_counter()
    violations, tightest = 0, 0.0
    for K in (2, 8, 32):
        for _ in range(100):
            losses = rng.uniform(-1, 1, size=(1000, K))
            ah = AdaHedge(K)
            learner = 0.0
            for xi in losses:
                learner += float(xi @ ah.weights)
                ah.update(xi)
            regret = learner - losses.sum(axis=0).min()
            bound = 2 * math.sqrt(4 + math.log(K)) * math.sqrt(float(np.sum(np.abs(losses).max(axis=1) ** 2)))
            violations += regret > bound
            tightest = max(tightest, regret / bound)
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed < 60
    report(5, ok, f"{violations} violations over 300 sequences, max regret/bound {tightest:.3f}, {elapsed:.1f}s")


def test_criterion_6_constrained_hedge_bounds():
    K, T, alpha = 5, 2000, 0.1
    reg_bound = size_regret_bound(K, T)
    viol_bound = violation_bound(K, T)
    failures = []
    worst = {"a": -math.inf, "b": 0.0, "c": 0.0}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        ch = ConstrainedHedge(K, T, alpha, G=1.0)
        miss = rng.uniform(0.05, 0.6, size=K)
        miss[0] = 0.0  # expert 0 always covers, so u* = e_0 is feasible
        regret = violation = 0.0
        for m in range(1, T + 1):
            omega = rng.uniform(0, 1, size=K)
            errs = (rng.random(K) < miss).astype(float)
            p = ch.weights.copy()
            regret += float(omega @ p) - omega[0]
            violation += max(float(errs @ p) - alpha, 0.0)
            ch.update(omega, errs)
            qb = queue_bound(ch.params.lambda_pot, m)
            worst["c"] = max(worst["c"], ch.queue / qb)
            if ch.queue > qb:
                failures.append((seed, "c", m))
        worst["a"] = max(worst["a"], regret / reg_bound)
        worst["b"] = max(worst["b"], violation / viol_bound)
        if regret > reg_bound:
            failures.append((seed, "a"))
        if violation > viol_bound:
            failures.append((seed, "b"))
    ok = not failures
    report(6, ok, f"{len(failures)} violations over 20 seeds; max ratio to bound "
                  f"(a) {worst['a']:.3f} (b) {worst['b']:.3f} (c) {worst['c']:.3f}")


def test_criterion_7_weighted_quantile_oracle():
    rng = np.random.default_rng(7)
    cases = []
    for _ in range(10_000):
        n = int(rng.integers(1, 51))
        if rng.random() < 0.5:
            scores = rng.integers(0, 10, size=n).astype(float)  # many ties
            weights = rng.integers(0, 5, size=n).astype(float)
            if weights.sum() == 0:
                weights[0] = 1.0
            tau = float(rng.integers(0, 11)) / 10  # lands on cumulative boundaries
        else:
            scores = rng.exponential(size=n)
            weights = rng.exponential(size=n)
            tau = float(rng.random())
        cases.append((scores, weights, tau))
    start = time.perf_counter()
    got = [lower_quantile(tau, WeightedScoreDistribution(s, w)) for s, w, tau in cases]
    elapsed = time.perf_counter() - start
    mismatches = sum(
        g != brute_lower_quantile(s.tolist(), w.tolist(), tau) for g, (s, w, tau) in zip(got, cases)
    )
    ok = mismatches == 0 and elapsed < 10
    report(7, ok, f"{mismatches} mismatches in 10000 cases, {elapsed:.2f}s")


def test_criterion_8_feasibility_vs_grid():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(200):
        K = int(rng.integers(1, 4))
        T = int(rng.integers(1, 21))
        alpha = float(rng.choice([0.05, 0.1, 0.2, 0.5]))
        E = (rng.random((T, K)) < rng.uniform(0.1, 0.9)).astype(float)
        rho, u = feasibility_diagnostic(E, alpha)
        worst = max(worst, abs(rho - simplex_grid_minimax_np(E, alpha, n=1200)))
    ok = worst <= 1e-3
    report(8, ok, f"max |rho - grid| {worst:.2e} over 200 instances")


def test_criterion_9_deviation_bound(identity_runs):
    ledgers, _ = identity_runs
    slack = [led.deviation_bound() - abs(led.miscoverage - led.alpha_target) for led in ledgers]
    bad = sum(s < 0 for s in slack)
    report(9, bad == 0, f"{bad} violations over {len(ledgers)} runs, min slack {min(slack):.3e}")
