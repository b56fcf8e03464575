"""Parametric conditional-variance cross-checks.

Quasi-maximum-likelihood fits of constant-mean GARCH(1,1) and of
FIGARCH(1,d,1) with an AR(1) mean, plus the closed-form multi-step GARCH
variance forecast. Optimization runs from five deterministic starting
points with the best end point kept, on smooth reparameterized coordinates
(log / logistic) so box constraints never bind mid-search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.signal import fftconvolve, lfilter
from scipy.special import expit, logit

from .errors import DataError, EstimationError
from .synth import FIGARCH_TRUNCATION, figarch_weights

LOG_2PI = math.log(2.0 * math.pi)
_PENALTY = 1e10


@dataclass(frozen=True)
class GarchFit:
    omega: float
    alpha: float
    beta: float
    mean: float
    loglik: float
    converged: bool
    at_boundary: bool
    h_path: np.ndarray
    nobs: int
    last_eps2: float
    last_h: float


@dataclass(frozen=True)
class FigarchFit:
    omega: float
    d: float
    phi: float
    beta: float
    ar_const: float
    ar1: float
    loglik: float
    aic: float
    bic: float
    converged: bool
    at_boundary: bool
    h_path: np.ndarray
    nobs: int
    n_params: int = 6
    min_lambda: float = 0.0


def garch11_filter(eps2: np.ndarray, omega: float, alpha: float, beta: float,
                   h0: float) -> np.ndarray:
    """Conditional-variance path h_t = omega + alpha e2_{t-1} + beta h_{t-1}.

    The recursion is a first-order linear filter in h, so it is evaluated by
    lfilter with h0 as the initial state; identical arithmetic to the loop.
    """
    eps2 = np.asarray(eps2, dtype=float)
    n = eps2.size
    h = np.empty(n)
    h[0] = h0
    if n > 1:
        drive = omega + alpha * eps2[:-1]
        h[1:] = lfilter([1.0], [1.0, -beta], drive, zi=[beta * h0])[0]
    return h


def figarch_filter(eps2: np.ndarray, omega: float, d: float, phi: float,
                   beta: float, truncation: int = FIGARCH_TRUNCATION,
                   presample: float | None = None) -> np.ndarray:
    """ARCH(inf) form h_t = omega/(1-beta) + sum_k lambda_k e2_{t-k}.

    Squared shocks before the sample start are set to `presample`
    (default: the sample mean of eps2). One FFT convolution evaluates the
    whole path.
    """
    eps2 = np.asarray(eps2, dtype=float)
    lam = figarch_weights(d, phi, beta, truncation)
    if presample is None:
        presample = float(eps2.mean())
    ext = np.concatenate([np.full(truncation, presample), eps2])
    conv = fftconvolve(ext, lam)[truncation:truncation + eps2.size]
    return omega / (1.0 - beta) + conv


def gaussian_loglik(eps: np.ndarray, h: np.ndarray) -> float:
    return -0.5 * float(np.sum(LOG_2PI + np.log(h) + eps * eps / h))


def _multistart_minimize(nll, starts, coarse_maxfev=400, polish_maxfev=2000):
    """Nelder-Mead from every start (best end point kept), then a polish.

    A final quasi-Newton touch-up with numerical gradients runs from the
    polished point and is kept only if it improves the objective.
    """
    best_x, best_f = None, np.inf
    for x0 in starts:
        res = minimize(nll, x0, method="Nelder-Mead",
                       options={"maxfev": coarse_maxfev, "xatol": 1e-4,
                                "fatol": 1e-8})
        if res.fun < best_f:
            best_x, best_f = res.x, res.fun
    if best_x is None or not np.isfinite(best_f):
        raise EstimationError("no feasible starting point for QMLE")
    res = minimize(nll, best_x, method="Nelder-Mead",
                   options={"maxfev": polish_maxfev, "xatol": 1e-6,
                            "fatol": 1e-10})
    converged = bool(res.success)
    if res.fun < best_f:
        best_x, best_f = res.x, res.fun
    try:
        res2 = minimize(nll, best_x, method="L-BFGS-B",
                        options={"maxiter": 100, "gtol": 1e-6})
        if np.isfinite(res2.fun) and res2.fun < best_f:
            best_x, best_f = res2.x, res2.fun
            converged = converged or bool(res2.success)
    except (ValueError, FloatingPointError):
        pass
    return best_x, best_f, converged


def fit_garch11(returns) -> GarchFit:
    """QMLE of constant-mean GARCH(1,1) with h_0 = sample variance."""
    r = np.asarray(returns, dtype=float)
    if r.ndim != 1 or r.size < 250:
        raise DataError(f"need >= 250 observations, got {r.size}")
    if not np.isfinite(r).all():
        raise DataError("returns contain non-finite values")
    mean = float(r.mean())
    eps = r - mean
    eps2 = eps * eps
    h0 = float(eps2.mean())
    n = eps.size

    # theta = (log omega, logit persistence, logit arch share)
    def unpack(theta):
        omega = math.exp(theta[0])
        persistence = expit(theta[1])
        share = expit(theta[2])
        return omega, persistence * share, persistence * (1.0 - share)

    def nll(theta):
        if np.any(np.abs(theta) > 40):
            return _PENALTY
        omega, alpha, beta = unpack(theta)
        h = garch11_filter(eps2, omega, alpha, beta, h0)
        return 0.5 * float(np.sum(LOG_2PI + np.log(h) + eps2 / h))

    start_ab = [(0.05, 0.90), (0.10, 0.85), (0.02, 0.95), (0.15, 0.70),
                (0.05, 0.50)]
    starts = []
    for a, b in start_ab:
        omega0 = h0 * (1.0 - a - b)
        starts.append([math.log(omega0), logit(a + b), logit(a / (a + b))])

    theta, fval, converged = _multistart_minimize(nll, starts)
    omega, alpha, beta = unpack(theta)
    h = garch11_filter(eps2, omega, alpha, beta, h0)
    at_boundary = (alpha + beta) > 0.9995 or alpha < 1e-7 or beta < 1e-7
    return GarchFit(omega=omega, alpha=alpha, beta=beta, mean=mean,
                    loglik=-fval, converged=converged,
                    at_boundary=at_boundary, h_path=h, nobs=n,
                    last_eps2=float(eps2[-1]), last_h=float(h[-1]))


def garch_forecast(fit: GarchFit, horizon: int) -> float:
    """(1/h) sum_{j=1..h} E[h_{T+j}] from the end of the fitted sample.

    E[h_{T+j}] = sigma2_bar + (alpha+beta)^{j-1} (h_{T+1} - sigma2_bar).
    """
    if horizon < 1:
        raise DataError(f"horizon must be >= 1, got {horizon}")
    ab = fit.alpha + fit.beta
    sigma2 = fit.omega / (1.0 - ab)
    h_next = fit.omega + fit.alpha * fit.last_eps2 + fit.beta * fit.last_h
    powers = np.power(ab, np.arange(horizon, dtype=float))  # ab^0 = 1 always
    return float(np.mean(sigma2 + powers * (h_next - sigma2)))


def fit_figarch(returns, truncation: int = FIGARCH_TRUNCATION) -> FigarchFit:
    """QMLE of FIGARCH(1,d,1) with an AR(1) mean equation.

    All six parameters (AR intercept and slope, omega, d, phi, beta) are
    optimized jointly. Candidate points whose truncated ARCH weights go
    negative are rejected with a large penalty, so the kept optimum always
    has a nonnegative weight sequence.
    """
    r = np.asarray(returns, dtype=float)
    if r.ndim != 1 or r.size < 1000:
        raise DataError(f"need >= 1000 observations, got {r.size}")
    if not np.isfinite(r).all():
        raise DataError("returns contain non-finite values")

    y = r[1:]
    x = r[:-1]
    n = y.size
    # OLS seed for the mean equation
    denom = float(np.sum((x - x.mean()) ** 2))
    rho0 = float(np.sum((x - x.mean()) * (y - y.mean())) / denom) if denom > 0 else 0.0
    rho0 = min(max(rho0, -0.9), 0.9)
    c0 = float(y.mean() - rho0 * x.mean())
    var_r = float(np.var(y))

    def unpack(theta):
        c = theta[0]
        rho = math.tanh(theta[1])
        omega = math.exp(theta[2])
        d = expit(theta[3])
        phi = expit(theta[4])
        beta = expit(theta[5])
        return c, rho, omega, d, phi, beta

    k_lags = np.arange(1, truncation + 1, dtype=float)

    def weights(d, phi, beta):
        delta = np.concatenate([[1.0], np.cumprod((k_lags - 1 - d) / k_lags)])
        a = delta.copy()
        a[1:] -= phi * delta[:-1]
        lam = -lfilter([1.0], [1.0, -beta], a)
        lam[0] = 0.0
        return lam

    def nll(theta):
        if np.any(np.abs(theta[2:]) > 40) or abs(theta[1]) > 20:
            return _PENALTY
        c, rho, omega, d, phi, beta = unpack(theta)
        lam = weights(d, phi, beta)
        worst = float(lam[1:].min())
        if worst < -1e-12:
            return _PENALTY * (1.0 + min(-worst, 1.0))
        np.clip(lam, 0.0, None, out=lam)
        eps = y - c - rho * x
        eps2 = eps * eps
        presample = float(eps2.mean())
        ext = np.concatenate([np.full(truncation, presample), eps2])
        h = omega / (1.0 - beta) + fftconvolve(ext, lam)[truncation:truncation + n]
        return 0.5 * float(np.sum(LOG_2PI + np.log(h) + eps2 / h))

    start_vol = [(0.30, 0.20, 0.40), (0.45, 0.10, 0.50), (0.20, 0.30, 0.30),
                 (0.40, 0.35, 0.60), (0.10, 0.05, 0.10)]
    starts = []
    for d0, phi0, beta0 in start_vol:
        lam0 = weights(d0, phi0, beta0)
        if lam0[1:].min() < -1e-12:
            continue
        scale = max(1.0 - float(lam0.sum()), 1e-3)
        omega0 = max(var_r * (1.0 - beta0) * scale, 1e-8)
        starts.append([c0, math.atanh(rho0), math.log(omega0), logit(d0),
                       logit(phi0), logit(beta0)])
    if not starts:
        raise EstimationError("no feasible FIGARCH starting point")

    theta, fval, converged = _multistart_minimize(nll, starts,
                                                  coarse_maxfev=400,
                                                  polish_maxfev=2500)
    if fval >= _PENALTY:
        raise EstimationError("FIGARCH search never left the infeasible region")
    c, rho, omega, d, phi, beta = unpack(theta)
    lam = weights(d, phi, beta)
    min_lambda = float(lam[1:].min())
    eps = y - c - rho * x
    h = figarch_filter(eps * eps, omega, d, phi, beta, truncation)
    loglik = -fval
    k = 6
    aic = 2.0 * k - 2.0 * loglik
    bic = k * math.log(n) - 2.0 * loglik
    at_boundary = (min(d, 1.0 - d) < 1e-4 or min(phi, 1.0 - phi) < 1e-4
                   or min(beta, 1.0 - beta) < 1e-4 or min_lambda < 1e-10)
    return FigarchFit(omega=omega, d=d, phi=phi, beta=beta, ar_const=c,
                      ar1=rho, loglik=loglik, aic=aic, bic=bic,
                      converged=converged, at_boundary=at_boundary,
                      h_path=h, nobs=n, min_lambda=min_lambda)
