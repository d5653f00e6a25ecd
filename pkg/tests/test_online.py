import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from olcp.experiments import ScenarioConfig, generate_scenario, ols_fit
from olcp.localization import silverman_bandwidth
from olcp.online import (
    ACI,
    LCP,
    OLCP,
    AciState,
    BoundaryLedger,
    DtACI,
    PredictionInterval,
    SplitCP,
    aci_level_update,
    default_gamma,
    dtaci_parameters,
    dtaci_weight_update,
)


def primed(method, scores, covariates=None):
    covariates = covariates if covariates is not None else [0.0] * len(scores)
    for x, s in zip(covariates, scores):
        method.window.push([x], s)
    return method


@pytest.mark.parametrize(
    "a_t, gamma, err, alpha_next, L, U",
    [
        (0.1, 0.01, 1, 0.091, 0.0, 0.0),
        (0.005, 0.01, 1, 0.0, 0.004, 0.0),
        (0.999, 0.05, 0, 1.0, 0.0, 0.004),
    ],
)
def test_aci_level_update(a_t, gamma, err, alpha_next, L, U):
    new, l, u = aci_level_update(AciState(a_t, gamma, 0.1), err)
    assert new.alpha_t == pytest.approx(alpha_next, abs=1e-15)
    assert l == pytest.approx(L, abs=1e-15)
    assert u == pytest.approx(U, abs=1e-15)


def test_aci_level_update_rejects_non_binary():
    with pytest.raises(ValueError):
        aci_level_update(AciState(0.1, 0.1, 0.1), 2)


@pytest.mark.parametrize("T, g", [(10000, 0.005), (1, 0.5), (900, 1 / 60)])
def test_default_gamma(T, g):
    assert default_gamma(T) == pytest.approx(g, rel=1e-12)


def test_prediction_interval():
    iv = PredictionInterval(1.0, 2.0)
    assert (iv.lower, iv.upper, iv.size) == (-1.0, 3.0, 4.0)
    assert iv.covers_score(2.0) and not iv.covers_score(2.0000001)
    with pytest.raises(ValueError):
        PredictionInterval(0.0, math.inf)


def test_first_step_is_skipped():
    m = SplitCP(0.1, 5, 1)
    assert m.step(1, [0.0], 0.0, 1.0) is None
    assert len(m.window) == 1
    assert m.step(2, [0.0], 0.0, 1.0) is not None


def test_cp_step_examples():
    m = primed(SplitCP(0.1, 20, 1), list(range(1, 10)))
    rec = m.step(1, [0.0], 0.0, 5.0)
    assert (rec.lower, rec.upper, rec.covered) == (-9.0, 9.0, True)
    m = primed(SplitCP(0.1, 20, 1), list(range(1, 10)))
    assert not m.step(1, [0.0], 0.0, 9.5).covered
    m = primed(SplitCP(0.3, 20, 1), [1.0])
    assert m.step(1, [0.0], 4.0, 4.0).covered


def test_window_receives_realized_score_after_issue():
    m = primed(SplitCP(0.1, 3, 1), [1.0, 2.0, 3.0])
    m.step(1, [0.0], 0.0, 50.0)
    assert m.window.scores.tolist() == [2.0, 3.0, 50.0]


def test_lcp_single_entry():
    m = primed(LCP(0.1, 5, 1, 0.5), [2.0])
    assert m.radius([3.0]) == 2.0


def test_lcp_two_entries_weighted():
    # covariates standardize to -1, +1; a query far below makes the weight ratio exp(-2/h) = 0.05/0.95
    h = 2 / math.log(19)
    m = primed(LCP(0.1, 5, 1, h), [1.0, 10.0], covariates=[0.0, 2.0])
    assert m.radius([-10.0]) == 1.0
    assert m.radius([12.0]) == 10.0


def test_lcp_degenerate_covariates_is_unweighted_quantile():
    scores = [4.0, 1.0, 7.0, 2.0, 9.0, 3.0, 5.0, 8.0, 6.0, 10.0]
    m = primed(LCP(0.25, 20, 1, 0.3), scores, covariates=[1.0] * 10)
    assert m.radius([1.0]) == sorted(scores)[math.ceil(0.75 * 10) - 1]


def test_olcp_level_extremes():
    scores = [3.0, 1.0, 2.0, 8.0]
    covs = [0.1, 0.5, -0.3, 2.0]
    m = primed(OLCP(0.1, 10, 1, 0.1, 0.4), scores, covs)
    assert m.radius_at(np.array([0.0]), 0.0) == 8.0
    assert m.radius_at(np.array([0.0]), 1.0) == 1.0


def reference_olcp(scores, outcomes, alpha, gamma, a1):
    """Uniform-weight OLCP written out longhand."""
    scores = list(scores)
    a = a1
    out = []
    for y in outcomes:
        n = len(scores)
        q = None
        for c in sorted(scores):
            if sum(1 for s in scores if s <= c) / n >= (1 - a) - 1e-12:
                q = c
                break
        err = 1 if abs(y) > q else 0
        z = a + gamma * (alpha - err)
        out.append((q, a, err))
        a = min(max(z, 0.0), 1.0)
        scores.append(abs(y))
    return out, a


def test_olcp_three_step_trace_matches_reference():
    outcomes = [2.5, 3.5, -0.5]
    expected, a_final = reference_olcp([1.0, 2.0, 3.0], outcomes, 0.1, 0.1, 0.1)
    m = primed(OLCP(0.1, 10, 1, 0.1, 0.7), [1.0, 2.0, 3.0])
    for (q, a, err), y in zip(expected, outcomes):
        rec = m.step(0, [0.0], 0.0, y)
        assert rec.upper == q and rec.alpha_t == pytest.approx(a, abs=1e-15)
        assert rec.covered == (not err)
    assert m.state.alpha_t == pytest.approx(a_final, abs=1e-15)


def test_olcp_matches_lcp_when_covariates_identical():
    rng = np.random.default_rng(0)
    scores = rng.exponential(size=40)
    h = 0.37
    lcp = primed(LCP(0.1, 50, 1, h), scores, [2.0] * 40)
    olcp = primed(OLCP(0.1, 50, 1, 0.05, h), scores, [2.0] * 40)
    assert olcp.radius_at(np.array([2.0]), 0.1) == lcp.radius([2.0])


def test_localized_family_decreasing_in_level():
    rng = np.random.default_rng(1)
    m = primed(OLCP(0.1, 100, 1, 0.05, 0.3), rng.exponential(size=80), rng.normal(size=80))
    x = np.array([0.4])
    radii = [m.radius_at(x, b) for b in np.linspace(0, 1, 101)]
    assert all(r1 >= r2 for r1, r2 in zip(radii, radii[1:]))


def test_dtaci_eta_and_sigma():
    eta, sigma = dtaci_parameters(0.1, 500, 6)
    # sqrt(3/500) * sqrt((ln 3000 + 2) / 0.0027), evaluated by hand
    assert eta == pytest.approx(4.715545819155626, rel=1e-12)
    assert sigma == 1 / 1000


def test_dtaci_identical_levels_keep_uniform_weights():
    m = primed(DtACI(0.1, 50, 1, 0.01), list(np.linspace(0.1, 5, 30)))
    assert m.state.mixture_level == pytest.approx(0.1)
    rec = m.step(1, [0.0], 0.0, 1.3)
    assert rec.alpha_t == pytest.approx(0.1)
    assert m.state.expert_weights == pytest.approx(np.full(6, 1 / 6))


def test_dtaci_pinned_expert_weight_nondecreasing():
    levels = np.array([0.05, 0.1, 0.2, 0.3])
    beta = 0.1
    from olcp.quantiles import pinball_loss
    losses = pinball_loss(beta, levels, 0.1)
    assert losses[1] == 0
    w = np.full(4, 0.25)
    prev = w[1]
    for _ in range(200):
        w = dtaci_weight_update(w, losses, 4.7, 0.001)
        assert w[1] >= prev - 1e-15
        assert np.all(w >= 0.001 - 1e-15)
        prev = w[1]
    assert w[1] > 0.25 and w.argmax() == 1


def test_dtaci_mixture_level_within_expert_range():
    cfg = ScenarioConfig("C", T=900, train_len=300, R=100)
    X, Y = generate_scenario(cfg, np.random.default_rng(5))
    slope, b = ols_fit(X[:300], Y[:300])
    m = DtACI(0.1, 100, 1, default_gamma(600))
    for x, y in zip(X[300:], Y[300:]):
        lv = m.state.expert_levels.copy()
        rec = m.step(0, [x], slope * x + b, y)
        if rec is not None:
            assert lv.min() - 1e-12 <= rec.alpha_t <= lv.max() + 1e-12
        assert np.all((m.state.expert_levels >= 0) & (m.state.expert_levels <= 1))
        assert abs(m.state.expert_weights.sum() - 1) < 1e-9


def test_ledger_diagnostics():
    led = BoundaryLedger(gamma=0.5, alpha_target=0.1, alpha_1=0.1)
    led.record(1, 0.35, 0.0, 0.0)
    assert led.lower_diagnostic() == pytest.approx(0.7)
    assert led.upper_diagnostic() == 0
    assert abs(led.residual()) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.sampled_from("ABC"), st.sampled_from([0.005, 0.05, 0.5]), st.integers(0, 10_000),
       st.sampled_from(["ACI", "OLCP"]))
def test_coverage_identity_and_deviation_bound(scenario, gamma, seed, which):
    cfg = ScenarioConfig(scenario, T=400, train_len=200, R=50)
    X, Y = generate_scenario(cfg, np.random.default_rng(seed))
    slope, b = ols_fit(X[:200], Y[:200])
    if which == "ACI":
        m = ACI(0.1, 50, 1, gamma)
    else:
        m = OLCP(0.1, 50, 1, gamma, silverman_bandwidth(1, 50))
    for x, y in zip(X[200:], Y[200:]):
        m.step(0, [x], slope * x + b, y)
        assert 0 <= m.state.alpha_t <= 1
    led = m.ledger
    assert led.max_abs_residual <= 1e-9
    assert abs(led.miscoverage - 0.1) <= led.deviation_bound() + 1e-12
