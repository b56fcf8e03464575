"""Synthetic processes with known ground truth.

Every estimator in this package is validated against draws from these
generators: exact-covariance Gaussian long-memory samples via circulant
embedding, GARCH / FIGARCH conditional-variance paths, and two small
demonstration panels (one with a stress factor coupled to a slowly moving
persistence state, one driven by a plain HAR recursion) used by the
end-to-end tests and the `simulate` command.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from .errors import ConfigError, DataError
from .ingest import MarketPanel, PARKINSON_DENOM

FIGARCH_TRUNCATION = 1000
BURN_IN = 2000

LONG_MEMORY_KINDS = ("arfima0d0", "fgn", "fbm_path", "rough_logvol")
COND_VOL_KINDS = ("garch11", "figarch1d1")


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator; identical seeds reproduce across platforms."""
    return np.random.Generator(np.random.Philox(seed))


def arfima_acov(d: float, nlags: int, sigma2: float = 1.0) -> np.ndarray:
    """Autocovariances gamma(0..nlags) of ARFIMA(0,d,0) with innovation
    variance sigma2.

    gamma(0) = sigma2 * Gamma(1-2d) / Gamma(1-d)^2 and consecutive lags obey
    gamma(k) = gamma(k-1) * (k-1+d) / (k-d), which stays finite for all
    d in (-1/2, 1/2) including d = 0 (white noise).
    """
    if not -0.5 < d < 0.5:
        raise ConfigError(f"ARFIMA memory parameter must be in (-0.5, 0.5), got {d}")
    gamma0 = sigma2 * math.gamma(1 - 2 * d) / math.gamma(1 - d) ** 2
    k = np.arange(1, nlags + 1, dtype=float)
    ratios = (k - 1 + d) / (k - d)
    return gamma0 * np.concatenate([[1.0], np.cumprod(ratios)])


def fgn_acov(hurst: float, nlags: int, sigma2: float = 1.0) -> np.ndarray:
    """Autocovariances gamma(0..nlags) of fractional Gaussian noise."""
    if not 0 < hurst < 1:
        raise ConfigError(f"Hurst exponent must be in (0, 1), got {hurst}")
    k = np.arange(nlags + 1, dtype=float)
    two_h = 2 * hurst
    return 0.5 * sigma2 * (
        np.abs(k + 1) ** two_h - 2 * np.abs(k) ** two_h + np.abs(k - 1) ** two_h
    )


class CirculantEmbedding:
    """Exact sampler for a stationary Gaussian series with given autocovariance.

    The length-(N+1) autocovariance vector is wrapped into the first row of a
    2N circulant matrix whose eigenvalues come from one FFT; a draw is then a
    single FFT of complex white noise scaled by the eigenvalue square roots.
    """

    def __init__(self, acov: np.ndarray):
        acov = np.asarray(acov, dtype=float)
        if acov.ndim != 1 or acov.size < 2:
            raise ConfigError("need autocovariances for at least lags 0 and 1")
        n = acov.size - 1
        row = np.concatenate([acov[:-1], acov[-1:], acov[-2:0:-1]])
        eig = np.fft.fft(row).real
        if eig.min() < -1e-8 * max(eig.max(), 1e-300):
            raise RuntimeError(
                "circulant embedding is not nonnegative definite for this "
                "autocovariance; increase the embedding padding (pass more lags)"
            )
        # tiny negative eigenvalues are FFT roundoff on an exact zero
        self._sqrt_eig = np.sqrt(np.clip(eig, 0.0, None))
        self.n = n
        self._m = 2 * n

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw `size` independent series of length n (2-D) or one (1-D)."""
        k = 1 if size is None else size
        u = rng.standard_normal((k, self._m))
        v = rng.standard_normal((k, self._m))
        spectrum = self._sqrt_eig * (u + 1j * v)
        paths = np.fft.fft(spectrum, axis=1).real[:, : self.n]
        paths /= math.sqrt(self._m)
        return paths[0] if size is None else paths


@dataclass(frozen=True)
class SynthSpec:
    """Parameter block for one synthetic draw; validated on construction."""

    kind: str
    nobs: int
    seed: int
    d: float | None = None
    hurst: float | None = None
    mu: float = 0.0
    nu: float = 1.0
    omega: float | None = None
    alpha: float | None = None
    beta: float | None = None
    phi: float | None = None
    innovation_sd: float = 1.0

    def __post_init__(self):
        if self.kind not in LONG_MEMORY_KINDS + COND_VOL_KINDS:
            raise ConfigError(f"unknown synthetic kind {self.kind!r}")
        if self.nobs < 2:
            raise ConfigError(f"nobs must be >= 2, got {self.nobs}")
        if self.innovation_sd <= 0:
            raise ConfigError("innovation_sd must be positive")
        if self.kind == "arfima0d0":
            if self.d is None or not -0.5 < self.d < 0.5:
                raise ConfigError(f"arfima0d0 needs d in (-0.5, 0.5), got {self.d}")
        elif self.kind in ("fgn", "fbm_path", "rough_logvol"):
            if self.hurst is None or not 0 < self.hurst < 1:
                raise ConfigError(f"{self.kind} needs hurst in (0, 1), got {self.hurst}")
        elif self.kind == "garch11":
            if self.omega is None or self.omega <= 0:
                raise ConfigError("garch11 needs omega > 0")
            if self.alpha is None or self.alpha < 0 or self.beta is None or self.beta < 0:
                raise ConfigError("garch11 needs alpha >= 0 and beta >= 0")
            if self.alpha + self.beta >= 1:
                raise ConfigError("garch11 needs alpha + beta < 1")
        elif self.kind == "figarch1d1":
            if self.omega is None or self.omega <= 0:
                raise ConfigError("figarch1d1 needs omega > 0")
            if self.d is None or not 0 < self.d < 1:
                raise ConfigError(f"figarch1d1 needs d in (0, 1), got {self.d}")
            if self.beta is None or not 0 <= self.beta < 1:
                raise ConfigError("figarch1d1 needs beta in [0, 1)")
            if self.phi is None:
                raise ConfigError("figarch1d1 needs phi")
            figarch_weights(self.d, self.phi, self.beta)  # nonnegativity check


def figarch_weights(d: float, phi: float, beta: float,
                    truncation: int = FIGARCH_TRUNCATION) -> np.ndarray:
    """ARCH(inf) weights lambda(0..truncation) of FIGARCH(1,d,1).

    lambda(L) = 1 - (1 - phi L)(1 - L)^d / (1 - beta L), expanded to the
    given truncation. lambda_0 is 0 by construction and lambda_1 equals
    d + phi - beta. Any weight below -1e-12 is a configuration error; the
    model's conditional variance would not be guaranteed nonnegative.
    """
    k = np.arange(1, truncation + 1, dtype=float)
    # fractional-difference coefficients of (1 - L)^d
    delta = np.concatenate([[1.0], np.cumprod((k - 1 - d) / k)])
    a = delta.copy()
    a[1:] -= phi * delta[:-1]
    b = lfilter([1.0], [1.0, -beta], a)
    lam = -b
    lam[0] = 0.0
    worst = lam[1:].min() if truncation >= 1 else 0.0
    if worst < -1e-12:
        raise ConfigError(
            f"FIGARCH weights go negative (min {worst:.3e}) for "
            f"d={d}, phi={phi}, beta={beta}"
        )
    np.clip(lam, 0.0, None, out=lam)
    return lam


def simulate_long_memory(spec: SynthSpec) -> np.ndarray:
    """Exact-covariance Gaussian draw of the requested long-memory process."""
    if spec.kind not in LONG_MEMORY_KINDS:
        raise ConfigError(f"{spec.kind!r} is not a long-memory kind")
    rng = make_rng(spec.seed)
    sigma2 = spec.innovation_sd ** 2
    if spec.kind == "arfima0d0":
        acov = arfima_acov(spec.d, spec.nobs, sigma2)
        return CirculantEmbedding(acov).sample(rng)
    acov = fgn_acov(spec.hurst, spec.nobs, sigma2)
    fgn = CirculantEmbedding(acov).sample(rng)
    if spec.kind == "fgn":
        return fgn
    path = np.cumsum(fgn)
    if spec.kind == "fbm_path":
        return path
    return np.exp(spec.mu + spec.nu * path)


def _simulate_garch11(omega, alpha, beta, nobs, rng, burn=BURN_IN):
    z = rng.standard_normal(nobs + burn)
    h = np.empty(nobs + burn)
    eps = np.empty(nobs + burn)
    h_t = omega / (1.0 - alpha - beta)  # stationary start
    for t in range(nobs + burn):
        h[t] = h_t
        eps[t] = math.sqrt(h_t) * z[t]
        h_t = omega + alpha * eps[t] * eps[t] + beta * h_t
    return eps[burn:], h[burn:]


def _simulate_figarch(omega, d, phi, beta, nobs, rng, burn=BURN_IN,
                      truncation=FIGARCH_TRUNCATION):
    lam = figarch_weights(d, phi, beta, truncation)
    base = omega / (1.0 - beta)
    lam_sum = float(lam.sum())
    if lam_sum >= 1.0:
        raise ConfigError("truncated FIGARCH weights sum to >= 1")
    ebar = base / (1.0 - lam_sum)  # truncated-model unconditional mean
    k = truncation
    total = nobs + burn
    e2 = np.full(k + total, ebar)
    lam_rev = lam[1:][::-1]
    z = rng.standard_normal(total)
    h = np.empty(total)
    eps = np.empty(total)
    for t in range(total):
        h_t = base + float(lam_rev @ e2[t:t + k])
        eps_t = math.sqrt(h_t) * z[t]
        h[t] = h_t
        eps[t] = eps_t
        e2[k + t] = eps_t * eps_t
    return eps[burn:], h[burn:]


def simulate_conditional_vol(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Simulate returns and the true conditional variance path."""
    if spec.kind not in COND_VOL_KINDS:
        raise ConfigError(f"{spec.kind!r} is not a conditional-vol kind")
    rng = make_rng(spec.seed)
    if spec.kind == "garch11":
        return _simulate_garch11(spec.omega, spec.alpha, spec.beta, spec.nobs, rng)
    return _simulate_figarch(spec.omega, spec.d, spec.phi, spec.beta,
                             spec.nobs, rng)


def _ar1_path(rho: float, n: int, rng) -> np.ndarray:
    """Unit-variance stationary AR(1) path."""
    innov_sd = math.sqrt(1.0 - rho * rho)
    e = rng.standard_normal(n) * innov_sd
    e[0] = rng.standard_normal()
    return lfilter([1.0], [1.0, -rho], e)


_DEMO_SECTORS = ["Financials", "Information Technology", "Energy", "Health Care"]


def demo_market_panel(kind: str = "coupled", n_stocks: int = 20,
                      n_days: int = 2500, seed: int = 20240601,
                      start: str = "2012-01-02", return_state: bool = False):
    """Synthetic OHLCV panel plus VIX/MOVE series for demos and tests.

    kind='coupled': log variance is a per-stock AR(1) whose persistence
    drifts with a slow latent state, plus a common stress factor that hits
    stock variance with a short transmission lag; VIX/MOVE observe the
    stress immediately, so market and persistence features carry real
    incremental signal beyond a stock's own history.

    kind='pure_har': log variance follows a plain HAR recursion per stock and
    VIX/MOVE are uninformative about the future given a stock's own history.

    The OHLC cells are built so the range-based variance recovers the
    generated variance exactly: log High - log Low = sqrt(4 ln 2 * v_t).
    """
    if kind not in ("coupled", "pure_har"):
        raise ConfigError(f"unknown demo panel kind {kind!r}")
    rng = make_rng(seed)
    burn = 300
    total = n_days + burn

    xbar = math.log(4e-4) + 0.3 * rng.standard_normal(n_stocks)
    state: dict = {"xbar": xbar}

    if kind == "coupled":
        rho_s = 0.97
        lag = 2
        stress = _ar1_path(rho_s, total, rng)
        slow = _ar1_path(0.995, total, rng)
        mstate = 1.0 / (1.0 + np.exp(-slow))
        phi_t = 0.80 + 0.12 * mstate
        beta_i = rng.uniform(0.6, 1.4, size=n_stocks)
        gamma_i = 0.60 * beta_i
        sigma_u = 0.65
        # persistent idiosyncratic part with drifting phi, normalized so the
        # persistence drift moves dynamics without inflating the scale
        z = rng.standard_normal((total, n_stocks))
        u = np.empty((total, n_stocks))
        u[0] = sigma_u * z[0]
        for t in range(1, total):
            innov_sd = sigma_u * math.sqrt(1.0 - phi_t[t] ** 2)
            u[t] = phi_t[t] * u[t - 1] + innov_sd * z[t]
        # stress hits stock variance with a short transmission lag, while
        # the implied-vol proxies observe it immediately
        lag_stress = np.concatenate([np.full(lag, stress[0]), stress[:-lag]])
        x = xbar + gamma_i * lag_stress[:, None] + u
        vix_noise = rng.standard_normal(total)
        move_shock = 0.8 * stress + 0.6 * rng.standard_normal(total)
        vix = 16.0 * np.exp(0.55 * stress + 0.60 * (mstate - 0.5)
                            + 0.08 * vix_noise)
        move = 90.0 * np.exp(0.25 * move_shock + 0.08 * rng.standard_normal(total))
        factor = rng.standard_normal(total)
        zmat = rng.standard_normal((total, n_stocks))
        load = 0.5
        shocks = load * factor[:, None] + math.sqrt(1 - load ** 2) * zmat
        state.update(stress=stress[burn:], mstate=mstate[burn:],
                     phi_t=phi_t[burn:], beta_i=beta_i, gamma_i=gamma_i,
                     sigma_u=sigma_u, u=u[burn:], rho_s=rho_s, lag=lag)
    else:
        b_d, b_w, b_m = 0.35, 0.30, 0.25
        sigma_e = 0.35
        eps = rng.standard_normal((total, n_stocks)) * sigma_e
        x = np.empty((total, n_stocks))
        x[:22] = xbar + eps[:22]
        for t in range(22, total):
            lag_d = x[t - 1]
            lag_w = x[t - 5:t].mean(axis=0)
            lag_m = x[t - 22:t].mean(axis=0)
            x[t] = (xbar * (1 - b_d - b_w - b_m)
                    + b_d * lag_d + b_w * lag_w + b_m * lag_m + eps[t])
        cs_mean = x.mean(axis=1)
        cs_sd = max(float(np.std(cs_mean)), 1e-12)
        vix = 16.0 * np.exp(0.6 * (cs_mean - cs_mean.mean()) / cs_sd
                            + 0.10 * rng.standard_normal(total))
        move = 90.0 * np.exp(0.20 * rng.standard_normal(total))
        shocks = rng.standard_normal((total, n_stocks))
        state.update(har_coefs=(b_d, b_w, b_m), sigma_e=sigma_e)

    v = np.exp(x)
    r = np.sqrt(v) * shocks

    x = x[burn:]
    v = v[burn:]
    r = r[burn:]
    vix = vix[burn:]
    move = move[burn:]
    state["logvar"] = x

    dates = pd.bdate_range(start, periods=n_days)
    tickers = [f"SYN{i:02d}" for i in range(n_stocks)]

    base_price = rng.uniform(20.0, 200.0, size=n_stocks)
    logc = np.log(base_price)[None, :] + np.cumsum(r, axis=0)
    close = np.exp(logc)
    half = 0.5 * np.sqrt(PARKINSON_DENOM * v)
    high = np.exp(logc + half)
    low = np.exp(logc - half)
    prev_close = np.vstack([close[:1], close[:-1]])
    open_ = np.clip(prev_close, low, high)

    vol_base = np.exp(rng.uniform(math.log(1e5), math.log(5e6), size=n_stocks))
    volume = np.round(vol_base[None, :] *
                      np.exp(0.3 * rng.standard_normal((n_days, n_stocks))))
    volume = np.maximum(volume, 1.0)

    def _frame(a):
        return pd.DataFrame(a, index=dates, columns=tickers)

    market = pd.DataFrame({"VIX": vix, "MOVE": move}, index=dates)
    sectors = {t: _DEMO_SECTORS[i % len(_DEMO_SECTORS)]
               for i, t in enumerate(tickers)}
    panel = MarketPanel(open=_frame(open_), high=_frame(high), low=_frame(low),
                        close=_frame(close), volume=_frame(volume),
                        market=market, sectors=sectors)
    if return_state:
        state["dates"] = dates
        state["tickers"] = tickers
        return panel, state
    return panel


def demo_oracle_forecast(state: dict, dates, horizon: int = 5) -> pd.DataFrame:
    """Conditional-moment forecast of the log mean future variance.

    Uses the generator's own latent state (stress level, idiosyncratic
    component, current persistence), so it upper-bounds what any model fit
    on the observables can achieve. The log of a mean of lognormals is
    approximated by a second-order delta correction around its mean.
    Requires the state dict of a 'coupled' panel built with
    return_state=True.
    """
    needed = ("stress", "u", "phi_t", "gamma_i", "sigma_u", "rho_s", "lag",
              "xbar", "dates", "tickers")
    missing = [k for k in needed if k not in state]
    if missing:
        raise ConfigError(f"oracle forecast needs coupled state keys {missing}")
    all_dates = pd.DatetimeIndex(state["dates"])
    pos = all_dates.get_indexer(pd.DatetimeIndex(dates))
    if (pos < 0).any():
        raise DataError("forecast dates must come from the generated panel")
    stress = state["stress"]
    u = state["u"]
    phi_t = state["phi_t"]
    gamma = state["gamma_i"]
    sigma_u = state["sigma_u"]
    rho = state["rho_s"]
    lag = state["lag"]
    xbar = state["xbar"]
    tickers = state["tickers"]
    h = horizon
    records = []
    for t in pos:
        phi = phi_t[t]
        mu = np.empty((h, len(tickers)))
        cov_s = np.zeros((h, h))
        cov_u = np.zeros((h, h))
        for j in range(1, h + 1):
            a = j - lag
            if a <= 0:
                s_mean = stress[max(t + a, 0)]
            else:
                s_mean = rho ** a * stress[t]
            mu[j - 1] = xbar + gamma * s_mean + phi ** j * u[t]
        for j in range(1, h + 1):
            for k in range(j, h + 1):
                a, b = j - lag, k - lag
                if a > 0:
                    cov_s[j - 1, k - 1] = rho ** (b - a) - rho ** (a + b)
                cov_u[j - 1, k - 1] = phi ** (k - j) - phi ** (j + k)
        cov_s += np.triu(cov_s, 1).T
        cov_u += np.triu(cov_u, 1).T
        for i, ticker in enumerate(tickers):
            cov = gamma[i] ** 2 * cov_s + sigma_u ** 2 * cov_u
            m_j = np.exp(mu[:, i] + 0.5 * np.diag(cov))
            m = m_j.mean()
            var_v = float(m_j @ np.expm1(cov) @ m_j) / h ** 2
            y_hat = math.log(m) - var_v / (2.0 * m ** 2)
            records.append((all_dates[t], ticker, y_hat))
    return pd.DataFrame(records, columns=["date", "ticker", "y_pred"])
