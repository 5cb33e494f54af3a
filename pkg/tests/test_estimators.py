import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spillover.domain import ConfigError, DataError
from spillover.estimators import (
    ESTIMATORS,
    PropensityConfig,
    UndefinedLevel,
    ZeroPropensityError,
    estimate_baseline,
    estimate_overall_tau,
    estimate_tau_m,
    fit_level_propensities,
    hajek_mean,
    hajek_weights,
    naive_overall,
    naive_per_m,
    naive_without_control_mixed,
    run_all_estimators,
    treated_level_distribution,
)
from spillover.simulator import case_config, oracle_propensities, simulate_experiment, true_mu

from conftest import make_dataset


# naive estimators

def test_naive_overall_hand_example():
    ds = make_dataset(z=[1, 1, 0, 0], y=[2, 4, 1, 3], m=[1, 1, 1, 0])
    assert naive_overall(ds) == 1.0


@pytest.mark.parametrize("z,y", [([1, 0], [5, 5]), ([1, 1, 0, 0, 0], [2.5] * 5)])
def test_naive_overall_equal_outcomes(z, y):
    assert naive_overall(make_dataset(z, y, m=[1] * len(z))) == 0.0


def test_naive_overall_empty_group():
    with pytest.raises(DataError, match="control group"):
        naive_overall(make_dataset([1, 1], [1, 2], [1, 1]))


def test_naive_per_m_hand_example():
    ds = make_dataset(z=[1, 1, 1, 0, 0], y=[3, 5, 9, 1, 1], m=[2, 2, 3, 0, 4])
    assert naive_per_m(ds, 2) == 3.0
    assert naive_per_m(make_dataset([1, 0], [7, 7], [2, 0]), 2) == 0.0
    with pytest.raises(UndefinedLevel):
        naive_per_m(ds, 5)


def test_naive_without_control_mixed_hand_example():
    ds = make_dataset(z=[1, 0, 0], y=[2, 0.5, 9], m=[1, 0, 3])
    assert naive_without_control_mixed(ds, 1) == 1.5
    assert naive_without_control_mixed(make_dataset([1, 0], [4, 4], [1, 0]), 1) == 0.0
    with pytest.raises(DataError, match="control-control group is empty"):
        naive_without_control_mixed(make_dataset([1, 0], [2, 1], [1, 2]), 1)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("truncate_at", [None, 4, 10])
def test_naive_identity_over_exposure_distribution(seed, truncate_at):
    ds = simulate_experiment(case_config("III", seed=seed))
    dist = treated_level_distribution(ds, truncate_at)
    combined = sum(p * naive_per_m(ds, m, truncate_at) for m, p in dist.items())
    assert abs(combined - naive_overall(ds)) < 1e-10


# Hájek mean

def test_hajek_hand_examples():
    ds = make_dataset(z=[1, 0, 1], y=[2, 4, 100], m=[3, 3, 1])
    assert hajek_mean(ds, 3, np.array([0.5, 0.25, 0.9])) == pytest.approx(10 / 3, abs=1e-15)
    assert hajek_mean(ds, 1, np.array([0.5, 0.25, 0.123])) == 100.0
    assert hajek_mean(ds, 3, np.full(3, 0.2)) == 3.0
    # without control-mixed only the treated unit at level 3 remains
    assert hajek_mean(ds, 3, np.array([0.5, 0.25, 0.9]), include_control_mixed=False) == 2.0


def test_hajek_errors():
    ds = make_dataset(z=[1, 0], y=[2, 4], m=[3, 3])
    with pytest.raises(UndefinedLevel):
        hajek_mean(ds, 5, np.full(2, 0.5))
    with pytest.raises(ZeroPropensityError, match="stabilize_weights"):
        hajek_mean(ds, 3, np.array([0.5, 0.0]))


small_levels = st.lists(
    st.tuples(st.integers(0, 1), st.integers(0, 3), st.floats(0, 50), st.floats(1e-3, 1.0)),
    min_size=1,
    max_size=25,
)


@settings(max_examples=200)
@given(small_levels, st.floats(1e-3, 1e3), st.booleans())
def test_hajek_properties(rows, c, pooled):
    z, m, y, e = (np.array(col) for col in zip(*rows))
    ds = make_dataset(z, y, m)
    for level in np.unique(m):
        mask = (m == level) if pooled else (m == level) & (z == 1)
        if not mask.any():
            continue
        est = hajek_mean(ds, level, e, pooled)
        assert hajek_mean(ds, level, np.full(len(y), 0.37), pooled) == pytest.approx(y[mask].mean(), rel=1e-12, abs=1e-12)
        assert abs(hajek_mean(ds, level, c * e, pooled) - est) <= 1e-12 * max(1.0, abs(est))
        assert y[mask].min() - 1e-12 <= est <= y[mask].max() + 1e-12
        assert hajek_weights(e, mask).sum() == pytest.approx(1.0, abs=1e-12)


# baseline

def test_zero_increment_baseline_is_pre_period():
    rng = np.random.default_rng(0)
    n = 200
    x = rng.random((n, 2))
    y_pre = rng.gamma(2.0, size=n)
    ds = make_dataset(z=np.zeros(n, int), y=y_pre, m=np.zeros(n, int), x=x, y_pre=y_pre)
    b = estimate_baseline(ds, "did-linear")
    np.testing.assert_allclose(b.predict(ds), y_pre, atol=1e-10)


def test_did_linear_recovers_slope():
    rng = np.random.default_rng(1)
    n = 10_000
    x = rng.random(n)
    y_pre = rng.gamma(3.0, size=n)
    y = y_pre + 3 * x + rng.normal(0, 1, n)
    ds = make_dataset(np.zeros(n, int), np.abs(y), np.zeros(n, int), x=x, y_pre=y_pre)
    # abs() keeps outcomes non-negative; only a negligible share of rows is touched
    b = estimate_baseline(ds, "did-linear")
    assert b.coef[1] == pytest.approx(3.0, abs=0.1)
    resid = ds.y - b.predict(ds)
    assert abs(resid.mean()) < 1e-10


def test_did_linear_only_uses_control_control():
    y_pre = np.array([1.0, 1.0, 1.0, 1.0, 1.0])
    ds = make_dataset(z=[0, 0, 0, 1, 0], y=[2.0, 3.0, 4.0, 50.0, 60.0], m=[0, 0, 0, 3, 2],
                      x=[0.0, 0.5, 1.0, 0.2, 0.7], y_pre=y_pre)
    b = estimate_baseline(ds, "did-linear")
    np.testing.assert_allclose(b.coef, [1.0, 2.0], atol=1e-12)


def test_baseline_errors():
    ds = make_dataset(z=[0, 0, 1], y=[1, 2, 3], m=[0, 0, 1])
    with pytest.raises(DataError, match="y_pre"):
        estimate_baseline(ds, "did-linear")
    ds = make_dataset(z=[0, 0, 1], y=[1, 2, 3], m=[0, 0, 1], y_pre=[1, 1, 1])
    with pytest.raises(DataError, match="more than 2"):
        estimate_baseline(ds, "did-linear")
    ds = make_dataset(z=[0] * 4, y=[1, 2, 3, 4], m=[0] * 4, x=[0.5] * 4, y_pre=[1] * 4)
    with pytest.raises(DataError, match="rank deficient"):
        estimate_baseline(ds, "did-linear")
    with pytest.raises(DataError, match="unknown baseline"):
        estimate_baseline(ds, "oracle")


def test_known_mu_baseline_wraps_true_mu():
    ds = make_dataset(z=[1, 0], y=[1, 1], m=[1, 0], x=[0.25, 0.75])
    np.testing.assert_allclose(estimate_baseline(ds).predict(ds), [0.5, 1.875])


# per-level and overall

def test_tau_m_is_hajek_minus_mean_baseline():
    ds = make_dataset(z=[1, 1, 0], y=[5, 5, 0], m=[2, 2, 0], x=[0.25, 0.25, 0.25])
    # mean baseline over all three players is 0.5 (true_mu(0.25))
    assert estimate_tau_m(ds, 2, np.full(3, 0.4), estimate_baseline(ds)) == 4.5


def test_overall_tau_examples():
    ds = make_dataset(z=[1, 1], y=[1, 1], m=[1, 1])
    assert estimate_overall_tau({1: 0.75}, ds).value == 0.75
    ds = make_dataset(z=[1, 1, 0], y=[1, 1, 1], m=[1, 2, 0])
    out = estimate_overall_tau({1: 1.0, 2: 3.0}, ds)
    assert out.value == 2.0 and out.dropped_mass == 0.0
    dist = treated_level_distribution(ds, None)
    assert sum(dist.values()) == pytest.approx(1.0)


def test_overall_tau_drops_undefined_levels_and_keeps_zero_exposure_mass():
    ds = make_dataset(z=[1, 1, 1, 1], y=[1] * 4, m=[0, 1, 2, 2])
    out = estimate_overall_tau({1: 1.0, 2: None}, ds)
    # the m=1 level carries all 3/4 positive mass; m=0 contributes zero
    assert out.value == pytest.approx(0.75)
    assert out.dropped_mass == pytest.approx(2 / 3)
    with pytest.raises(DataError):
        estimate_overall_tau({1: None, 2: None}, ds)


# composition

@pytest.fixture(scope="module")
def case_one():
    return simulate_experiment(case_config("I", seed=11))


def test_run_all_estimators_matches_component_calls(case_one):
    ds = case_one
    out = run_all_estimators(ds, 10)
    assert tuple(out) == ESTIMATORS
    cols, _ = fit_level_propensities(ds, np.ones(ds.n, bool), 10, PropensityConfig())
    treated_cols, _ = fit_level_propensities(ds, ds.z == 1, 10, PropensityConfig())
    base = estimate_baseline(ds)
    assert set(out["proposed"].levels) == set(range(11))
    assert out["naive"].overall == pytest.approx(naive_overall(ds), abs=1e-10)
    cc = (ds.z == 0) & (ds.m == 0)
    assert out["naive-wo-cm"].overall == pytest.approx(ds.y[ds.z == 1].mean() - ds.y[cc].mean(), abs=1e-10)
    for m in range(0, 11):
        if out["naive"].estimate(m) is None:
            continue
        assert out["naive"].estimate(m) == naive_per_m(ds, m, 10)
        assert out["naive-wo-cm"].estimate(m) == naive_without_control_mixed(ds, m, 10)
        assert out["proposed"].estimate(m) == pytest.approx(estimate_tau_m(ds, m, cols[m], base, True, 10), abs=1e-12)
        assert out["proposed-wo-cm"].estimate(m) == pytest.approx(
            estimate_tau_m(ds, m, treated_cols[m], base, False, 10), abs=1e-12
        )
    again = run_all_estimators(ds, 10)
    assert [e.to_dict() for e in again.values()] == [e.to_dict() for e in out.values()]


def test_levels_flagged_not_zero_filled(case_one):
    out = run_all_estimators(case_one, 10)
    for est in out.values():
        for le in est.levels.values():
            assert le.defined == (le.estimate is not None)
            if not le.defined:
                assert le.reason and le.n_units == 0
            else:
                assert le.ess <= le.n_units + 1e-9


def test_analysis_population_switch(case_one):
    pooled_all = run_all_estimators(case_one, 10)["proposed"]
    pooled_analysis = run_all_estimators(case_one, 10, PropensityConfig(fit_population="analysis"))["proposed"]
    assert pooled_all.overall != pooled_analysis.overall
    assert abs(pooled_all.overall - pooled_analysis.overall) < 0.2
    with pytest.raises(ConfigError):
        PropensityConfig(fit_population="treated")


def test_missing_control_control_only_breaks_that_estimator():
    rng = np.random.default_rng(0)
    n = 60
    z = np.r_[np.ones(30, int), np.zeros(30, int)]
    ds = make_dataset(z, rng.random(n), np.r_[rng.integers(1, 4, 30), rng.integers(1, 4, 30)], x=rng.random(n))
    out = run_all_estimators(ds, 3)
    assert out["naive-wo-cm"].error and "control-control" in out["naive-wo-cm"].error
    assert out["naive"].error is None and out["proposed"].overall is not None


def test_oracle_null_contrast_at_zero_exposure():
    vals = []
    for seed in range(100):
        c = case_config("II", seed=seed)
        ds = simulate_experiment(c)
        e = oracle_propensities(ds, c, n_replays=4)
        mask = ds.m == 0
        if mask.any():
            vals.append(estimate_tau_m(ds, 0, np.maximum(e[:, 0], 1e-12), estimate_baseline(ds)))
    # per-replicate sd is about 0.7 with ~25 units at level 0, so 0.2 is about 3 standard errors
    assert abs(np.mean(vals)) < 0.2


def test_true_mu_baseline_mean_matches_simulated_controls():
    ds = simulate_experiment(case_config("I", seed=5))
    assert float(np.mean(true_mu(ds.x[:, 0]))) == pytest.approx(1.2, abs=0.06)
