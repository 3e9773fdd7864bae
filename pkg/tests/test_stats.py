from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ubm.errors import EstimationError, GridError
from ubm.scenario import Scenario
from ubm.stats import (DEFAULT_SIGMA, MomentReport, batch_means, ensemble_stats, estimate_covariance,
                       estimate_mean, estimate_pseudo_covariance, gaussianity_test,
                       increment_independence_check, poisson_fit, run_ensemble, sigma_threshold, verdict)


def _cgauss(rng, size):
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / math.sqrt(2)


def _small_scenario(**kw):
    doc = dict(n=64, initial_law="identity", alpha_n=1.0, outer_times=[0.0, 1.0],
               observable="entries", entries=[[1, 1]], replications=10_000, seed=4)
    doc.update(kw)
    return Scenario.from_dict(doc)


# ---------------------------------------------------------------- estimators

def test_batch_means_partition():
    bm = batch_means(np.arange(10.0), 3)
    assert bm.shape == (3,)
    assert bm.mean() == pytest.approx(np.mean([1.5, 5.0, 8.0]))


def test_too_few_batches():
    with pytest.raises(EstimationError):
        estimate_mean(np.ones(5), batches=1)
    with pytest.raises(EstimationError):
        estimate_mean(np.ones(1))


def test_zero_samples_flagged():
    st_ = ensemble_stats(np.zeros((40, 2, 1)), (0.0, 1.0))
    assert not np.any(st_.covariance)
    assert not np.any(st_.covariance_se)
    assert st_.degenerate()


def test_pseudo_covariance_of_circular_gaussian():
    z = _cgauss(np.random.default_rng(0), 100_000)
    p, se = estimate_pseudo_covariance(z)
    assert abs(p[0, 0]) <= DEFAULT_SIGMA * abs(se[0, 0])


def test_pseudo_covariance_of_real_gaussian():
    x = np.random.default_rng(1).standard_normal(100_000)
    p, se = estimate_pseudo_covariance(x)
    assert abs(p[0, 0] - 1) <= DEFAULT_SIGMA * abs(se[0, 0])


def test_covariance_is_hermitian_with_real_diagonal():
    rng = np.random.default_rng(2)
    z = _cgauss(rng, (500, 3)) @ _cgauss(rng, (3, 3))
    c, _ = estimate_covariance(z)
    np.testing.assert_array_equal(c, c.conj().T)
    assert np.all(np.diag(c).imag == 0) and np.all(np.diag(c).real >= 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 300), st.integers(1, 4))
def test_covariance_psd(seed, n, k):
    z = _cgauss(np.random.default_rng(seed), (n, k))
    c, _ = estimate_covariance(z)
    assert np.min(np.linalg.eigvalsh(c)) >= -1e-10 * max(1.0, np.max(np.abs(c)))


def test_mean_standard_error_scale():
    x = np.random.default_rng(3).standard_normal(100_000)
    _, se = estimate_mean(x)
    assert se == pytest.approx(1 / math.sqrt(x.size), rel=0.4)


# ---------------------------------------------------------------- ensembles

def test_run_ensemble_variance_example():
    st_ = run_ensemble(_small_scenario())
    c, se = st_.covariance[1, 0, 0], st_.covariance_se[1, 0, 0]
    assert abs(c - 1.0) <= DEFAULT_SIGMA * abs(se)
    assert st_.max_defect < 1e-10


def test_run_ensemble_two_replications():
    st_ = run_ensemble(_small_scenario(replications=2))
    assert np.all(np.isfinite(st_.covariance_se))


def test_run_ensemble_deterministic():
    a = run_ensemble(_small_scenario(replications=50))
    b = run_ensemble(_small_scenario(replications=50))
    assert a.equals(b)
    c = run_ensemble(_small_scenario(replications=50, seed=5))
    assert not a.equals(c)


def test_ensemble_stats_shape_errors():
    with pytest.raises(EstimationError):
        ensemble_stats(np.zeros((5, 2)), (0.0, 1.0))
    with pytest.raises(EstimationError):
        ensemble_stats(np.zeros((1, 2, 1)), (0.0, 1.0))


# ---------------------------------------------------------------- verdicts

def test_verdict_equal():
    assert verdict(1.03, 0.01, 1.0)
    assert not verdict(1.05, 0.01, 1.0)
    assert verdict(1.05, 0.01, 1.0, rel_tol=0.1)
    assert verdict(0.05, 0.001, 0.0, rel_tol=0.1, scale=1.0)
    assert verdict(0.5, 0.0, 0.0, abs_tol=0.5)


def test_verdict_complex_se_combines_parts():
    assert verdict(1 + 0.05j, 0.03 + 0.04j, 1.0, threshold=1.0)
    assert not verdict(1 + 0.06j, 0.03 + 0.04j, 1.0, threshold=1.0)


def test_verdict_one_sided():
    assert verdict(0.9, 0.0, 1.0, kind="upper")
    assert not verdict(1.1, 0.0, 1.0, kind="upper")
    assert verdict(0.02, 0.0, 0.01, kind="lower")
    assert not verdict(0.005, 0.0, 0.01, kind="lower")
    with pytest.raises(EstimationError):
        verdict(1, 1, 1, kind="bogus")


def test_verdict_rejects_nonfinite():
    assert not verdict(math.nan, 1.0, 0.0)


def test_moment_report_roundtrip():
    r = MomentReport("E|X|^2", 0.5, 1 + 0.1j, 0.02 + 0.01j, 1.0, rel_tol=0.1, scale=0.5)
    back = MomentReport.from_dict(r.to_dict())
    assert back == r
    assert r.sigma_distance == pytest.approx(abs(0.1j) / math.hypot(0.02, 0.01))
    assert r.verdict == "Fail"  # 0.1 exceeds both 4 se = 0.089 and 0.1 * 0.5
    assert MomentReport("x", 0.5, 1 + 0.1j, 0.02 + 0.01j, 1.0, rel_tol=0.1, scale=1.0).verdict == "Pass"


def test_sigma_threshold_env(monkeypatch):
    monkeypatch.delenv("UBM_TOL_SIGMA", raising=False)
    assert sigma_threshold() == 4.0
    monkeypatch.setenv("UBM_TOL_SIGMA", "3")
    assert sigma_threshold() == 3.0
    monkeypatch.setenv("UBM_TOL_SIGMA", "-1")
    with pytest.raises(EstimationError):
        sigma_threshold()


# ---------------------------------------------------------------- gaussianity

def test_gaussianity_null():
    rep = gaussianity_test(_cgauss(np.random.default_rng(10), 100_000))
    assert rep.p_re > 0.01 and rep.p_im > 0.01
    assert abs(rep.kurtosis_ratio - 2) <= DEFAULT_SIGMA * rep.kurtosis_se
    assert rep.passed()


def test_gaussianity_haar_entry():
    from ubm.samplers import RngStream, haar_frame

    n = 256
    z = np.array([math.sqrt(n) * haar_frame(n, 1, RngStream(77, i))[0, 0] for i in range(100_000)])
    rep = gaussianity_test(z)
    assert rep.p_re > 0.01 and rep.p_im > 0.01
    # exact finite-n kurtosis ratio of sqrt(n) u_11 is 2n/(n+1), not yet the limit 2
    assert abs(rep.kurtosis_ratio - 2 * n / (n + 1)) <= DEFAULT_SIGMA * rep.kurtosis_se


def test_gaussianity_rejects_exponential():
    x = np.random.default_rng(11).exponential(1.0, 100_000) - 1.0
    rep = gaussianity_test(x + 1j * x)
    assert rep.p_re < 0.01


def test_gaussianity_needs_samples():
    with pytest.raises(EstimationError):
        gaussianity_test(np.zeros(10))


# ---------------------------------------------------------------- increments

def _bm(rng, n, times):
    steps = np.diff(times)
    inc = _cgauss(rng, (n, len(steps))) * np.sqrt(steps)
    return np.concatenate([np.zeros((n, 1)), np.cumsum(inc, axis=1)], axis=1)


def test_independence_null():
    times = [0.0, 0.5, 1.0, 2.0]
    x = _bm(np.random.default_rng(12), 20_000, times)
    assert increment_independence_check(x, times, 0.5, 1.0, 2.0).passed()


def test_independence_detects_correlated_increments():
    times = [0.0, 0.5, 1.0, 2.0]
    z = _cgauss(np.random.default_rng(13), 20_000)
    x = np.outer(z, times)
    rep = increment_independence_check(x, times, 0.5, 1.0, 2.0)
    assert not rep.passed()


def test_independence_grid_errors():
    x = np.zeros((10, 3))
    with pytest.raises(GridError):
        increment_independence_check(x, [0, 1, 2], 0, 1.5, 2)
    with pytest.raises(GridError):
        increment_independence_check(x, [0, 1, 2], 1, 0, 2)


# ---------------------------------------------------------------- Poisson

def test_poisson_fit_null():
    c = np.random.default_rng(14).poisson(1.0, 100_000)
    assert poisson_fit(c).tv <= 0.01


def test_poisson_fit_all_zero():
    assert poisson_fit(np.zeros(10_000, dtype=int)).tv == pytest.approx(1 - math.exp(-1), abs=1e-12)


def test_poisson_fit_errors():
    with pytest.raises(EstimationError):
        poisson_fit(np.zeros(10))
    with pytest.raises(EstimationError):
        poisson_fit(np.full(10_000, -1))
