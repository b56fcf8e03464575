"""GARCH / FIGARCH filters, QMLE fits, and the closed-form variance forecast."""

import math

import numpy as np
import pytest

from volpers import condvol, synth
from volpers.errors import DataError


def simulate_garch(seed, nobs=10_000, omega=0.05, alpha=0.05, beta=0.90):
    spec = synth.SynthSpec(kind="garch11", nobs=nobs, seed=seed, omega=omega,
                           alpha=alpha, beta=beta)
    return synth.simulate_conditional_vol(spec)


def simulate_figarch(seed, nobs=10_000, omega=0.2, d=0.35, phi=0.3, beta=0.5):
    spec = synth.SynthSpec(kind="figarch1d1", nobs=nobs, seed=seed,
                           omega=omega, d=d, phi=phi, beta=beta)
    return synth.simulate_conditional_vol(spec)


# ------------------------------------------------------------------ filters


def test_garch_filter_matches_hand_loop():
    rng = np.random.default_rng(0)
    eps2 = rng.standard_normal(60) ** 2
    omega, alpha, beta, h0 = 0.1, 0.07, 0.9, 0.3
    hand = np.empty(eps2.size)
    hand[0] = h0
    for t in range(1, eps2.size):
        hand[t] = omega + alpha * eps2[t - 1] + beta * hand[t - 1]
    got = condvol.garch11_filter(eps2, omega, alpha, beta, h0)
    np.testing.assert_allclose(got, hand, rtol=1e-13)


def test_garch_filter_no_feedback_is_constant():
    eps2 = np.random.default_rng(1).standard_normal(40) ** 2
    h = condvol.garch11_filter(eps2, 0.25, 0.0, 0.0, h0=0.7)
    assert h[0] == 0.7
    np.testing.assert_allclose(h[1:], 0.25, rtol=1e-15)


def test_figarch_filter_d_zero_limit_matches_constant_garch():
    eps2 = np.random.default_rng(2).standard_normal(500) ** 2
    omega = 0.4
    fig = condvol.figarch_filter(eps2, omega, d=1e-9, phi=0.0, beta=0.0)
    gar = condvol.garch11_filter(eps2, omega, 0.0, 0.0, h0=omega)
    assert np.max(np.abs(fig - gar)) < 1e-6


def test_figarch_filter_hand_convolution():
    rng = np.random.default_rng(3)
    eps2 = rng.standard_normal(30) ** 2
    omega, d, phi, beta = 0.1, 0.35, 0.3, 0.5
    lam = synth.figarch_weights(d, phi, beta)
    presample = eps2.mean()
    hand = np.empty(eps2.size)
    for t in range(eps2.size):
        acc = 0.0
        for k in range(1, lam.size):
            past = eps2[t - k] if t - k >= 0 else presample
            acc += lam[k] * past
        hand[t] = omega / (1.0 - beta) + acc
    got = condvol.figarch_filter(eps2, omega, d, phi, beta)
    np.testing.assert_allclose(got, hand, rtol=1e-9)


# -------------------------------------------------------------- GARCH QMLE


def test_fit_garch_requires_clean_returns():
    with pytest.raises(DataError):
        condvol.fit_garch11(np.random.default_rng(4).standard_normal(249))
    bad = np.random.default_rng(5).standard_normal(300)
    bad[5] = np.nan
    with pytest.raises(DataError):
        condvol.fit_garch11(bad)


def test_fit_garch_constant_variance_data():
    r = np.random.default_rng(6).standard_normal(3000) * 2.0
    fit = condvol.fit_garch11(r)
    uncond = fit.omega / (1.0 - fit.alpha - fit.beta)
    assert uncond == pytest.approx(np.var(r), rel=0.05)
    assert fit.alpha < 0.05
    assert fit.mean == pytest.approx(r.mean(), rel=1e-12)


def test_fit_garch_single_seed_recovery():
    r, _ = simulate_garch(seed=1)
    fit = condvol.fit_garch11(r)
    assert fit.converged
    assert not fit.at_boundary
    assert fit.omega == pytest.approx(0.05, abs=0.02)
    assert fit.alpha == pytest.approx(0.05, abs=0.02)
    assert fit.beta == pytest.approx(0.90, abs=0.03)
    assert fit.h_path.size == fit.nobs == r.size
    assert (fit.h_path > 0).all()
    # the reported likelihood is reproducible from the reported parameters
    eps = r - fit.mean
    h = condvol.garch11_filter(eps * eps, fit.omega, fit.alpha, fit.beta,
                               h0=float((eps * eps).mean()))
    assert condvol.gaussian_loglik(eps, h) == pytest.approx(fit.loglik,
                                                            rel=1e-10)
    assert fit.last_eps2 == eps[-1] ** 2
    assert fit.last_h == h[-1]


def test_fit_garch_beats_every_documented_start(garch_probe_points=(
        (0.05, 0.90), (0.10, 0.85), (0.02, 0.95), (0.15, 0.70), (0.05, 0.50))):
    r, _ = simulate_garch(seed=2, nobs=3000)
    fit = condvol.fit_garch11(r)
    eps = r - r.mean()
    h0 = float((eps * eps).mean())
    for a, b in garch_probe_points:
        h = condvol.garch11_filter(eps * eps, h0 * (1 - a - b), a, b, h0)
        assert fit.loglik >= condvol.gaussian_loglik(eps, h) - 1e-6


# ----------------------------------------------------------- GARCH forecast


def test_garch_forecast_hand_recursion():
    fit = condvol.GarchFit(omega=0.2, alpha=0.1, beta=0.85, mean=0.0,
                           loglik=0.0, converged=True, at_boundary=False,
                           h_path=np.array([1.0]), nobs=1,
                           last_eps2=2.0, last_h=1.5)
    ab = 0.95
    sigma2 = 0.2 / (1.0 - ab)
    h_next = 0.2 + 0.1 * 2.0 + 0.85 * 1.5
    for horizon in (1, 3, 22):
        expected = np.mean([sigma2 + ab ** (j - 1) * (h_next - sigma2)
                            for j in range(1, horizon + 1)])
        assert condvol.garch_forecast(fit, horizon) == \
            pytest.approx(expected, rel=1e-12)
    with pytest.raises(DataError):
        condvol.garch_forecast(fit, 0)


def test_garch_forecast_flat_without_persistence():
    fit = condvol.GarchFit(omega=4.0, alpha=0.0, beta=0.0, mean=0.0,
                           loglik=0.0, converged=True, at_boundary=True,
                           h_path=np.array([4.0]), nobs=1,
                           last_eps2=9.0, last_h=5.0)
    for horizon in (1, 5, 22):
        assert condvol.garch_forecast(fit, horizon) == 4.0


# ------------------------------------------------------------ FIGARCH QMLE


def test_fit_figarch_requires_clean_returns():
    with pytest.raises(DataError):
        condvol.fit_figarch(np.random.default_rng(7).standard_normal(999))
    bad = np.random.default_rng(8).standard_normal(1200)
    bad[-1] = np.inf
    with pytest.raises(DataError):
        condvol.fit_figarch(bad)


def test_fit_figarch_information_criteria_and_weights():
    r, _ = simulate_figarch(seed=3, nobs=1500)
    fit = condvol.fit_figarch(r)
    assert fit.nobs == r.size - 1
    assert fit.n_params == 6
    assert fit.aic == 2.0 * 6 - 2.0 * fit.loglik
    assert fit.bic == 6 * math.log(fit.nobs) - 2.0 * fit.loglik
    assert fit.min_lambda >= -1e-12
    assert (fit.h_path > 0).all() and fit.h_path.size == fit.nobs
    # reported likelihood is reproducible from the reported parameters
    y, x = r[1:], r[:-1]
    eps = y - fit.ar_const - fit.ar1 * x
    h = condvol.figarch_filter(eps * eps, fit.omega, fit.d, fit.phi, fit.beta)
    assert condvol.gaussian_loglik(eps, h) == pytest.approx(fit.loglik,
                                                            rel=1e-9)


def test_fit_figarch_single_seed_recovery():
    r, _ = simulate_figarch(seed=1)
    fit = condvol.fit_figarch(r)
    assert fit.converged
    assert fit.d == pytest.approx(0.35, abs=0.08)
    assert abs(fit.ar1) < 0.05  # the DGP mean equation is white noise
    assert fit.min_lambda >= -1e-12
