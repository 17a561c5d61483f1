import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from phc_purcell.acceptance import convolution_oracle
from phc_purcell.trpl import (DEFAULT_SIGMA_NS, DecayHistogram, DecayModelParams, FitError, binned_model,
                              decay_model, fit_decay, lifetime_ratio, simulate_histogram)

SIGMA = 0.0495


def test_default_sigma():
    assert round(DEFAULT_SIGMA_NS * 1000, 2) == 49.50


def test_params_canonical_order_and_validation():
    p = DecayModelParams([(1.0, 2.0), (3.0, 0.2)])
    assert list(p.lifetimes) == [0.2, 2.0]
    for bad in ([(1.0, 0.0)], [(-1.0, 1.0)], []):
        with pytest.raises(ValueError):
            DecayModelParams(bad)
    with pytest.raises(ValueError):
        DecayModelParams([(1.0, 1.0)], baseline=-1)


@pytest.mark.parametrize("tau", [0.07, 0.2, 2.14])
def test_vanishing_irf_limit(tau):
    t = tau * np.array([0.01, 0.1, 1.0, 3.0, 10.0])
    y = decay_model(t, DecayModelParams([(2.0, tau)], sigma=1e-6 * tau))
    assert np.allclose(y, 2.0 * np.exp(-t / tau), rtol=1e-9, atol=0)
    assert decay_model(-0.01 * tau, DecayModelParams([(2.0, tau)], sigma=1e-6 * tau)) == 0.0


@pytest.mark.parametrize("t", [-0.2, 0.0, 0.5, 2.14, 5.0])
def test_single_component_matches_quadrature(t):
    model = float(decay_model(t, DecayModelParams([(1.0, 2.14)], sigma=SIGMA)))
    assert model == pytest.approx(convolution_oracle(t, 2.14, SIGMA), rel=1e-6)


def test_oracle_itself_against_plain_quad():
    # the windowed oracle agrees with an unwindowed integral where the latter is easy
    t, tau, s = 0.5, 2.14, SIGMA
    ref, _ = integrate.quad(lambda x: math.exp(-x / tau) * math.exp(-(t - x) ** 2 / (2 * s * s))
                            / (s * math.sqrt(2 * math.pi)), 0, t + 20 * s, points=[t], epsabs=0, epsrel=1e-12)
    assert convolution_oracle(t, tau, s) == pytest.approx(ref, rel=1e-10)


def test_far_past_is_baseline():
    p = DecayModelParams([(3.0, 0.2), (1.0, 2.14)], sigma=SIGMA, baseline=0.7)
    assert decay_model(-1e3, p) == 0.7
    assert decay_model(-50.0, p) == 0.7


@given(st.floats(0.01, 5.0), st.floats(0.0, 0.2), st.floats(0.1, 10.0))
@settings(max_examples=50)
def test_normalisation(tau, sigma, a):
    p = DecayModelParams([(a, tau)], sigma=sigma)
    period = max(60 * tau, 1.0)
    edges = np.linspace(-1.0 - 10 * sigma, period, 200001)
    total = np.sum(binned_model(edges, p) * np.diff(edges))
    assert total == pytest.approx(a * tau, rel=1e-3)
    assert np.all(decay_model(np.linspace(-2, period, 5000), p) >= 0)


def test_simulate_zero_photons():
    h = simulate_histogram(DecayModelParams([(1.0, 2.14)]), 0, seed=3)
    assert h.total_counts == 0 and len(h.counts) == 1250


def test_simulate_matches_model():
    tau = 2.14
    n = 1_000_000
    p = DecayModelParams([(1.0 / tau, tau)], sigma=SIGMA)
    h = simulate_histogram(p, n, seed=4)
    expected = n * binned_model(h.edges, p) * h.bin_width
    ok = np.abs(h.counts - expected) <= 5 * np.sqrt(np.maximum(expected, 1.0))
    assert ok.mean() >= 0.99


def test_dark_counts_poisson():
    totals = [simulate_histogram(DecayModelParams([(1.0, 1.0)]), 0, dark_rate=30, acquisition_time=100,
                                 seed=s).total_counts for s in range(200)]
    assert abs(np.mean(totals) - 3000) < 4 * math.sqrt(3000 / 200)
    assert np.var(totals, ddof=1) == pytest.approx(3000, rel=0.3)


def test_simulation_deterministic():
    p = DecayModelParams([(3.0, 0.2), (1.0, 2.14)])
    a = simulate_histogram(p, 10000, dark_rate=30, acquisition_time=10, wrap=True, seed=9)
    b = simulate_histogram(p, 10000, dark_rate=30, acquisition_time=10, wrap=True, seed=9)
    assert np.array_equal(a.counts, b.counts)


def test_simulate_preconditions():
    p = DecayModelParams([(1.0, 1.0)])
    with pytest.raises(ValueError):
        simulate_histogram(p, -1)
    with pytest.raises(ValueError):
        simulate_histogram(p, 10, bin_width=0)


def test_histogram_validation():
    with pytest.raises(ValueError):
        DecayHistogram(0.01, np.array([1, -1]))
    with pytest.raises(ValueError):
        fit_decay(DecayHistogram(0.01, np.zeros(100)))
    spike = np.zeros(100)
    spike[-1] = 100
    with pytest.raises(FitError):
        fit_decay(DecayHistogram(0.01, spike))


def _noiseless(components, baseline=0.0):
    edges = -1.0 + 0.01 * np.arange(1251)
    p = DecayModelParams(components, sigma=DEFAULT_SIGMA_NS, baseline=baseline)
    return DecayHistogram(0.01, binned_model(edges, p), -1.0)


def test_noiseless_exact_recovery():
    fit = fit_decay(_noiseless([(3000.0, 0.2), (1000.0, 2.14)]))
    assert fit.converged
    assert np.allclose(fit.lifetimes, [0.2, 2.14], rtol=1e-6)
    assert np.allclose(fit.params.amplitudes, [3000, 1000], rtol=1e-6)
    assert fit.reduced_chi2 < 1e-12


def test_two_lifetime_round_trip_accuracy():
    p = DecayModelParams([(3.0, 0.20), (1.0, 2.14)], sigma=SIGMA)
    fit = fit_decay(simulate_histogram(p, 1_000_000, seed=11), 2, "fixed", SIGMA)
    tf, tl = fit.lifetimes
    assert abs(tf / 0.20 - 1) < 0.05 and abs(tl / 2.14 - 1) < 0.03
    cov = fit.covariance
    assert np.allclose(cov, cov.T)
    assert np.linalg.eigvalsh(cov).min() >= -1e-12 * np.abs(cov).max()
    assert np.allclose(np.sqrt(np.diag(cov)), [fit.std_errors[k] for k in fit.param_names])


def test_free_sigma_recovers_irf():
    p = DecayModelParams([(3.0, 0.20), (1.0, 2.14)], sigma=SIGMA)
    fit = fit_decay(simulate_histogram(p, 1_000_000, seed=12), 2, "free", 0.03)
    assert fit.converged and not fit.sigma_fixed
    assert fit.params.sigma == pytest.approx(SIGMA, rel=0.1)


def test_single_exponential_with_two_components():
    h = simulate_histogram(DecayModelParams([(1.0, 2.14)], sigma=SIGMA), 1_000_000, seed=0)
    fit = fit_decay(h, 2)
    (a0, t0), (a1, t1) = fit.params.components
    errs = fit.lifetime_errors()
    coincide = abs(t0 - t1) <= 2 * math.hypot(*errs)
    vanishing = min(a0 - 2 * fit.std_errors["a_0"], a1 - 2 * fit.std_errors["a_1"]) <= 0
    assert coincide or vanishing
    assert np.all(np.isfinite(errs))
    assert abs(t1 / 2.14 - 1) < 0.01


def test_estimator_consistency():
    p = DecayModelParams([(3.0, 0.20), (1.0, 2.14)], sigma=SIGMA)
    taus, errs = [], []
    for seed in range(100):
        fit = fit_decay(simulate_histogram(p, 1_000_000, seed=1000 + seed), 2, "fixed", SIGMA)
        taus.append(fit.lifetimes[1])
        errs.append(fit.lifetime_errors()[1])
    assert abs(np.mean(taus) / 2.14 - 1) < 0.01
    ratio = np.std(taus, ddof=1) / np.mean(errs)
    assert 0.5 <= ratio <= 2.0


def test_lifetime_ratio_examples():
    r, e = lifetime_ratio((2.14, 0.28), (0.77, 0.06), "long")
    assert (round(r, 2), round(e, 2)) == (2.78, 0.42)
    r, e = lifetime_ratio((0.20, 0.02), (0.07, 0.03), "fast")
    assert (round(r, 2), round(e, 2)) == (2.86, 1.26)
    assert lifetime_ratio((1.3, 0.0), (1.3, 0.0)) == (1.0, 0.0)


def test_lifetime_ratio_missing_component():
    fit = fit_decay(_noiseless([(1000.0, 2.14)], baseline=1.0), 1)
    with pytest.raises(FitError):
        lifetime_ratio(fit, fit, "fast")
    with pytest.raises(ValueError):
        lifetime_ratio(fit, fit, "middle")


@given(st.sampled_from([1.5, 2.0, 7.0]))
@settings(max_examples=3)
def test_lifetime_ratio_scale_invariant(k):
    # every bin stays above one count, so the weights scale uniformly
    ref = _noiseless([(3000.0, 0.2), (1000.0, 2.14)], baseline=5.0)
    cav = _noiseless([(3000.0, 0.07), (1000.0, 0.77)], baseline=5.0)
    ref.counts = ref.counts + np.random.default_rng(0).normal(0, 1, ref.counts.size)
    cav.counts = cav.counts + np.random.default_rng(1).normal(0, 1, cav.counts.size)
    base = lifetime_ratio(fit_decay(ref), fit_decay(cav))
    scaled = lifetime_ratio(fit_decay(DecayHistogram(0.01, k * ref.counts, -1.0)),
                            fit_decay(DecayHistogram(0.01, k * cav.counts, -1.0)))
    assert scaled[0] == pytest.approx(base[0], rel=1e-6)
