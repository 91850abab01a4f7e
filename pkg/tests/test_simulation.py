import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.special import softmax
from scipy.stats import qmc

from mmitr.data import Dataset
from mmitr.gps import GpsModel
from mmitr.pipeline import PipelineConfig, multi_ol_instances
from mmitr.simulation import (
    BETA_CORRECT, BETA_MISSPECIFIED, ScenarioConfig, baseline_hazard, cumulative_baseline,
    fit_multi_ol, generate_continuous, inverse_cumulative_baseline, main_effect, optimal_arm,
    replication_seeds, run_experiment, sample_survival, summarize, survival_test_set,
)


def test_beta_constants():
    np.testing.assert_array_equal(BETA_CORRECT, [[1, 2, 1, 1, 1, 1], [1, 1, 2, 1, 1, 1],
                                                 [1, 1, 1, 4, 1, 1], [1, 1, -1, 1, 1, 5]])
    np.testing.assert_array_equal(BETA_MISSPECIFIED[2:], [[1, 1, 1, 2, 1, 1], [1, 1, 1, 1, 1, 2]])
    assert ScenarioConfig(gps_model="misspecified").beta is BETA_MISSPECIFIED


def test_boundary_examples():
    pts = np.array([[0.9, 0.9], [0.1, 0.9], [0.1, 0.1], [0.9, 0.1]])
    X = np.column_stack([pts, np.full((4, 4), 0.5)])
    assert optimal_arm(X, "linear").tolist() == [1, 2, 3, 4]
    x = np.array([[0.2, 0.5, 0, 0, 0, 0]])
    assert optimal_arm(x, "nonlinear").tolist() == [4]


def reference_arm(x1, x2, boundary):
    if boundary == "linear":
        if x1 > 0.5 and x2 > 0.5:
            return 1
        if x1 <= 0.5 and x2 > 0.5:
            return 2
        if x1 <= 0.5 and x2 <= 0.5:
            return 3
        return 4
    q = 0.5 * (x2 - 0.5) ** 2
    if q - x1 + 0.7 < 0:
        return 1
    if 0.3 < q + x1 <= 0.55:
        return 3
    if q + x1 <= 0.3:
        return 4
    return 2


@pytest.mark.parametrize("boundary", ["linear", "nonlinear"])
def test_optimal_arm_self_consistent(boundary):
    cfg = ScenarioConfig(boundary=boundary, n=3000)
    d = generate_continuous(cfg, np.random.default_rng(1))
    ref = [reference_arm(x[0], x[1], boundary) for x in d.covariates]
    assert d.optimal_arms.tolist() == ref


@pytest.mark.parametrize("gps_model", ["correct", "misspecified"])
def test_arm_frequencies_match_integral(gps_model):
    d = generate_continuous(ScenarioConfig(gps_model=gps_model, n=100000), np.random.default_rng(2))
    Z = qmc.Sobol(6, scramble=True, seed=0).random(2**16)
    beta = BETA_CORRECT if gps_model == "correct" else BETA_MISSPECIFIED
    eta = Z @ beta.T
    truth = softmax(eta if gps_model == "correct" else eta ** 2, axis=1).mean(axis=0)
    freq = np.bincount(d.treatments, minlength=5)[1:] / d.n
    np.testing.assert_allclose(freq, truth, atol=0.01)


@pytest.mark.parametrize("effect", ["simple", "complex"])
def test_outcome_designs(effect):
    d = generate_continuous(ScenarioConfig(main_effect=effect, n=5000), np.random.default_rng(3))
    hit = (d.treatments == d.optimal_arms).astype(float)
    if effect == "simple":
        np.testing.assert_array_equal(d.outcomes, 2.0 * hit + main_effect(d.covariates, effect))
    else:
        resid = d.outcomes - 2 * hit - main_effect(d.covariates, effect)
        assert resid.min() >= -1e-15 and resid.max() <= 1 + 1e-15 and abs(resid.mean() - 0.5) < 0.02


def test_treatment_effect_gap_under_random_assignment():
    rng = np.random.default_rng(4)
    n = 100000
    X = rng.uniform(size=(n, 6))
    A = rng.integers(1, 5, size=n)
    R = 2.0 * (A == optimal_arm(X)) + main_effect(X, "simple")
    hit = A == optimal_arm(X)
    assert abs(R[hit].mean() - R[~hit].mean() - 2.0) < 0.02


def test_inversion_examples():
    for arm in (1, 2):
        assert inverse_cumulative_baseline(np.array([1.0]), arm)[0] == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("arm", [1, 2, 3, 4])
def test_cumulative_baseline_is_integral_of_hazard(arm):
    for t in (0.1, 0.25, 0.5, 0.75, 0.9, 1.0, 1.7, 4.0, 9.1):
        ref = quad(lambda s: float(baseline_hazard(s, arm)), 0, t, points=[0.25, 0.75, 1.0],
                   limit=200)[0]
        assert float(cumulative_baseline(t, arm)) == pytest.approx(ref, rel=1e-9, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from([1, 2, 3, 4]), st.floats(1e-8, 50))
def test_inverse_round_trip(arm, h):
    t = inverse_cumulative_baseline(np.array([h]), arm)
    assert abs(cumulative_baseline(t, arm)[0] - h) < 1e-8 * max(1.0, h)


def test_survival_design_residuals_and_convention():
    cfg = ScenarioConfig(outcome="survival", n=20000)
    s = sample_survival(cfg, np.random.default_rng(5))
    d = s.dataset
    H = np.empty(d.n)
    for arm in range(1, 5):
        sel = d.treatments == arm
        H[sel] = cumulative_baseline(s.true_time[sel], arm)
    assert np.max(np.abs(H * np.exp(-s.risk) + np.log(s.uniforms))) < 1e-8
    np.testing.assert_array_equal(d.time, np.minimum(np.minimum(s.true_time, s.censoring), 9.1))
    alive = s.true_time > 9.1
    assert np.all(d.event[alive & (s.censoring >= 9.1)] == 1)
    assert np.all(d.event[s.censoring < np.minimum(s.true_time, 9.1)] == 0)
    # survival risk has no uniform noise term, even for the complex design
    sc = sample_survival(ScenarioConfig(outcome="survival", main_effect="complex", n=200),
                         np.random.default_rng(6))
    X = sc.dataset.covariates
    expect = 2.0 * (sc.dataset.treatments == sc.dataset.optimal_arms) + main_effect(X, "complex")
    np.testing.assert_array_equal(sc.risk, expect)


def test_survival_test_set_reward():
    cfg = ScenarioConfig(outcome="survival", n=500)
    d = survival_test_set(cfg, np.random.default_rng(7))
    assert d.outcomes.max() <= 9.1 and np.all(d.outcomes >= d.time)


def test_multi_ol_uniform_equal_weights():
    rng = np.random.default_rng(8)
    n = 40
    d = Dataset(rng.normal(size=(n, 2)), np.resize([1, 2, 3, 4], n), 4, outcomes=np.full(n, 2.0))
    inst = multi_ol_instances(d, GpsModel(np.zeros((3, 3)), 4))
    np.testing.assert_allclose(inst.weights, 2.0 / (n * 0.25))
    np.testing.assert_array_equal(inst.labels, d.treatments)


def test_multi_ol_clipped_weight():
    n = 4
    d = Dataset(np.array([[0.0], [1.0], [2.0], [3.0]]), [1, 2, 3, 4], 4, outcomes=[1.5, 1, 1, 1])
    g = GpsModel(np.array([[30.0, 0.0], [30.0, 0.0], [30.0, 0.0]]), 4, clip=(0.01, 1.0))
    inst = multi_ol_instances(d, g)
    assert inst.weights[0] == pytest.approx(100 * 1.5 / n, rel=1e-12)


def test_multi_ol_shifts_negative_outcomes():
    d = Dataset(np.arange(8.0)[:, None], np.resize([1, 2], 8), 2, outcomes=np.arange(8.0) - 3)
    inst = multi_ol_instances(d, GpsModel(np.zeros((1, 2)), 2))
    assert np.all(inst.weights > 0) and len(inst) == 7


def test_fit_multi_ol_runs():
    d = generate_continuous(ScenarioConfig(n=200), np.random.default_rng(9))
    rule = fit_multi_ol(d, GpsModel(np.zeros((3, 7)), 4), lam=0.01)
    assert set(np.unique(rule.predict(d.covariates))) <= {1, 2, 3, 4}


def test_replication_seeds_distinct():
    a, b = replication_seeds(7, 0), replication_seeds(7, 1)
    assert len({*vars(a).values(), *vars(b).values()}) == 10
    assert replication_seeds(7, 0) == a


FAST = PipelineConfig(lambda_grid=(1e-2, 1e-1))


def test_experiment_rows_and_determinism():
    cfg = ScenarioConfig(n=150, test_n=1000, replications=2, seed=7)
    rows = run_experiment(cfg, ["match-gw1", "multi-ol"], FAST)
    assert len(rows) == 4
    assert {(r["replication"], r["method"]) for r in rows} == {
        (0, "match-gw1"), (0, "multi-ol"), (1, "match-gw1"), (1, "multi-ol")}
    assert all(r["status"] == "ok" for r in rows)
    assert rows == run_experiment(cfg, ["match-gw1", "multi-ol"], FAST)
    s = summarize(rows)
    assert s["match-gw1"]["n_ok"] == 2


def test_failures_are_recorded():
    cfg = ScenarioConfig(n=8, test_n=100, replications=1)
    rows = run_experiment(cfg, ["match-gw1"], FAST)
    assert len(rows) == 1 and rows[0]["status"].startswith("failed")
    assert math.isnan(rows[0]["value"])


def test_unknown_method():
    with pytest.raises(ValueError):
        run_experiment(ScenarioConfig(replications=1), ["cox"])


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(boundary="curved")
    with pytest.raises(ValueError):
        ScenarioConfig.from_code("XX")
    assert ScenarioConfig.from_code("nc").code == "NC"
