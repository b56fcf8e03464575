"""Forecast evaluation and inference.

Loss panels on the log-variance scale, Newey-West HAC variance of a mean,
panel-aware Diebold-Mariano tests with the Harvey finite-sample correction,
conditioning splits (volatility regimes, crisis windows, sectors, liquidity
halves), pooled standardized-lasso importance, and cumulative loss
differentials.

Sign convention: every statistic is oriented so that positive numbers mean
the challenger model beats the benchmark.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import t as student_t

from .errors import ConfigError, DataError, EstimationError
from .features import PREDICTORS, FeaturePanel
from .ladder import (DEFAULT_LAMBDA_GRID, FitResult, fit_shrinkage,
                     select_lambda_cv, warmup_cutoff)

log = logging.getLogger(__name__)

LOSS_KINDS = ("mse_log", "qlike")
GFC_SPAN = (pd.Timestamp("2008-07-01"), pd.Timestamp("2009-12-31"))
COVID_SPAN = (pd.Timestamp("2020-03-01"), pd.Timestamp("2020-12-31"))


@dataclass(frozen=True)
class LossPanel:
    model_id: str
    horizon: int
    kind: str
    frame: pd.DataFrame  # columns: date, ticker, loss
    n_excluded: int = 0

    @property
    def by_date(self) -> pd.Series:
        return self.frame.groupby("date")["loss"].mean()

    def pooled(self) -> float:
        return float(self.frame["loss"].mean())


@dataclass(frozen=True)
class DMResult:
    statistic: float          # HLN-corrected, panel-aware
    p_value: float
    statistic_unadjusted: float   # same variance, no HLN factor
    pooled_iid_statistic: float   # cells treated i.i.d. (illustrative only)
    n_dates: int
    bandwidth: int
    k: int
    hln_factor: float
    mean_differential: float
    nw_fallback: bool = False


def compute_losses(forecast_set, kind: str = "mse_log") -> LossPanel:
    """Per-cell forecast losses.

    mse_log: (y - y_hat)^2. qlike: y_hat + exp(y - y_hat), the log-forecast
    form whose unique minimum over y_hat sits at y_hat = y with value y + 1.
    Non-finite forecasts are excluded and counted.
    """
    if kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss kind {kind!r}")
    frame = forecast_set.frame
    ok = np.isfinite(frame["y_pred"].to_numpy()) \
        & np.isfinite(frame["y_true"].to_numpy())
    n_excluded = int((~ok).sum())
    frame = frame[ok]
    y = frame["y_true"].to_numpy(dtype=float)
    y_hat = frame["y_pred"].to_numpy(dtype=float)
    if kind == "mse_log":
        loss = (y - y_hat) ** 2
    else:
        loss = y_hat + np.exp(y - y_hat)
    out = pd.DataFrame({"date": frame["date"].to_numpy(),
                        "ticker": frame["ticker"].to_numpy(),
                        "loss": loss})
    return LossPanel(model_id=forecast_set.model_id,
                     horizon=forecast_set.horizon, kind=kind, frame=out,
                     n_excluded=n_excluded)


def newey_west_variance(series, bandwidth: int):
    """HAC variance of the sample mean with Bartlett weights.

    omega = gamma_0 + 2 sum_{l=1..B} (1 - l/(B+1)) gamma_l, with the biased
    (1/T) autocovariances; returns (omega / T, fallback_flag). When omega
    comes out nonpositive the plain gamma_0 / T is returned with the flag
    set.
    """
    x = np.asarray(series, dtype=float)
    t = x.size
    if bandwidth < 0 or t <= bandwidth:
        raise ConfigError(
            f"need series length > bandwidth >= 0, got T={t}, B={bandwidth}")
    xc = x - x.mean()
    gamma0 = float(xc @ xc) / t
    omega = gamma0
    for lag in range(1, bandwidth + 1):
        gamma = float(xc[lag:] @ xc[:-lag]) / t
        omega += 2.0 * (1.0 - lag / (bandwidth + 1.0)) * gamma
    if omega <= 0:
        log.warning("Newey-West variance nonpositive; falling back to gamma_0")
        return gamma0 / t, True
    return omega / t, False


def hln_factor(n_dates: int, k: int) -> float:
    """Harvey small-sample correction for a k-step-ahead comparison."""
    t = float(n_dates)
    return math.sqrt((t + 1.0 - 2.0 * k + k * (k - 1.0) / t) / t)


def dm_hln(loss_benchmark: LossPanel, loss_challenger: LossPanel,
           h: int) -> DMResult:
    """Panel Diebold-Mariano test on per-date mean loss differentials.

    The differential is benchmark minus challenger, so positive statistics
    mean the challenger wins. The HAC bandwidth is ceil(h/5) - 1 and the
    Harvey correction uses k = ceil(h/5) (horizons map to weekly strides).
    P-values are two-sided against Student-t with (dates - 1) degrees of
    freedom.
    """
    a = loss_benchmark.frame.set_index(["date", "ticker"])["loss"]
    b = loss_challenger.frame.set_index(["date", "ticker"])["loss"]
    if len(a) != len(b) or not a.index.equals(b.index):
        raise DataError("loss panels are not aligned on (date, ticker)")
    diff = a - b
    d_bar = diff.groupby(level="date").mean()
    n_dates = d_bar.size
    if n_dates < 3:
        raise DataError(f"need >= 3 evaluation dates, got {n_dates}")
    if n_dates < 10:
        log.warning("only %d evaluation dates; the t(T-1) reference is crude",
                    n_dates)
    k = math.ceil(h / 5)
    bandwidth = k - 1
    var_mean, fallback = newey_west_variance(d_bar.to_numpy(), bandwidth)
    mean_diff = float(d_bar.mean())
    factor = hln_factor(n_dates, k)
    if var_mean <= 0:
        # equal-loss degenerate case: zero differential everywhere
        if mean_diff == 0.0:
            plain, stat, p_value = 0.0, 0.0, 1.0
        else:
            raise EstimationError("differential variance is zero")
    else:
        plain = mean_diff / math.sqrt(var_mean)
        stat = plain * factor
        p_value = 2.0 * float(student_t.sf(abs(stat), n_dates - 1))

    cells = diff.to_numpy(dtype=float)
    cell_var = float(cells.var(ddof=1))
    pooled = float(cells.mean() / math.sqrt(cell_var / cells.size)) \
        if cell_var > 0 else 0.0
    return DMResult(statistic=stat, p_value=p_value,
                    statistic_unadjusted=plain, pooled_iid_statistic=pooled,
                    n_dates=n_dates, bandwidth=bandwidth, k=k,
                    hln_factor=factor, mean_differential=mean_diff,
                    nw_fallback=fallback)


def align_losses(a: LossPanel, b: LossPanel):
    """Restrict two loss panels to their common (date, ticker) cells."""
    ia = a.frame.set_index(["date", "ticker"]).index
    ib = b.frame.set_index(["date", "ticker"]).index
    common = ia.intersection(ib)
    if len(common) == 0:
        raise DataError("loss panels share no (date, ticker) cells")

    def _cut(panel: LossPanel) -> LossPanel:
        frame = panel.frame.set_index(["date", "ticker"])
        frame = frame.loc[common].reset_index()
        return LossPanel(model_id=panel.model_id, horizon=panel.horizon,
                         kind=panel.kind, frame=frame,
                         n_excluded=panel.n_excluded)

    return _cut(a), _cut(b)


def vix_quartile_groups(dates, market: pd.DataFrame) -> pd.Series:
    """Assign each date to a VIX quartile computed on those same dates.

    Breakpoints use linear-interpolation percentiles; values tied with a
    breakpoint fall into the lower quartile.
    """
    dates = pd.DatetimeIndex(dates)
    if "VIX" not in market.columns:
        raise DataError("market panel lacks the VIX series")
    vix = market["VIX"].reindex(dates)
    if vix.isna().any():
        missing = dates[vix.isna()][0]
        raise DataError(f"VIX missing on evaluation date {missing.date()}")
    values = vix.to_numpy(dtype=float)
    q1, q2, q3 = np.percentile(values, [25, 50, 75])
    group = 1 + (values > q1).astype(int) + (values > q2).astype(int) \
        + (values > q3).astype(int)
    return pd.Series([f"q{g}" for g in group], index=dates, name="vix_quartile")


def crisis_groups(dates) -> pd.Series:
    dates = pd.DatetimeIndex(dates)
    out = np.where((dates >= GFC_SPAN[0]) & (dates <= GFC_SPAN[1]), "gfc",
                   np.where((dates >= COVID_SPAN[0]) & (dates <= COVID_SPAN[1]),
                            "covid", "other"))
    return pd.Series(out, index=dates, name="crisis_window")


def split_report(loss_by_model: dict, benchmark: str, grouping: str,
                 market: pd.DataFrame | None = None,
                 sectors: dict | None = None,
                 liquidity_groups: dict | None = None) -> pd.DataFrame:
    """Percent loss improvement vs the benchmark within condition groups.

    For each group g and model m, emits 100 * (MSE_bench - MSE_m) /
    MSE_bench over the cells both models forecast inside g. Empty groups
    are omitted.
    """
    if benchmark not in loss_by_model:
        raise ConfigError(f"benchmark {benchmark!r} missing from loss panels")
    bench = loss_by_model[benchmark].frame.set_index(["date", "ticker"])["loss"]

    def _group_of_cells(index: pd.MultiIndex) -> pd.Series:
        dates = index.get_level_values("date")
        tickers = index.get_level_values("ticker")
        if grouping == "vix_quartile":
            if market is None:
                raise ConfigError("vix_quartile grouping needs market data")
            by_date = vix_quartile_groups(pd.DatetimeIndex(dates).unique(),
                                          market)
            return pd.Series(by_date.reindex(dates).to_numpy(), index=index)
        if grouping == "crisis_window":
            by_date = crisis_groups(pd.DatetimeIndex(dates).unique())
            return pd.Series(by_date.reindex(dates).to_numpy(), index=index)
        if grouping == "sector":
            if sectors is None:
                raise ConfigError("sector grouping needs the sector map")
            return pd.Series([sectors[t] for t in tickers], index=index)
        if grouping == "liquidity_half":
            if liquidity_groups is None:
                raise ConfigError("liquidity_half grouping needs the halves")
            return pd.Series([liquidity_groups.get(t, "unknown")
                              for t in tickers], index=index)
        if grouping == "date":
            return pd.Series(dates.strftime("%Y-%m-%d"), index=index)
        raise ConfigError(f"unknown grouping {grouping!r}")

    rows = []
    for model_id, panel in loss_by_model.items():
        if model_id == benchmark:
            continue
        other = panel.frame.set_index(["date", "ticker"])["loss"]
        joint = pd.DataFrame({"bench": bench, "model": other}).dropna()
        groups = _group_of_cells(joint.index)
        for name, chunk in joint.groupby(groups.to_numpy()):
            mse_b = float(chunk["bench"].mean())
            mse_m = float(chunk["model"].mean())
            rows.append({
                "grouping": grouping, "group": name, "model": model_id,
                "n_cells": len(chunk), "mse_benchmark": mse_b,
                "mse_model": mse_m,
                "pct_improvement": 100.0 * (mse_b - mse_m) / mse_b,
            })
    return pd.DataFrame(rows)


def pooled_importance(features: FeaturePanel, horizon: int,
                      warmup_frac: float = 0.4, n_splits: int = 5,
                      grid=None) -> pd.DataFrame:
    """Standardized pooled-lasso coefficients on the out-of-sample rows.

    One lasso per horizon on all complete rows dated after the warm-up
    cutoff, penalty chosen by forward-chaining CV; coefficients are emitted
    in the fixed predictor order with exact zeros kept.
    """
    target = f"y_h{horizon}"
    frame = features.frame
    cutoff = warmup_cutoff(frame["date"].unique(), warmup_frac)
    frame = frame[frame["date"] > cutoff]
    X = frame[PREDICTORS].to_numpy(dtype=float)
    y = frame[target].to_numpy(dtype=float)
    ok = np.isfinite(X).all(axis=1) & np.isfinite(y)
    if ok.sum() < len(PREDICTORS) + 2:
        raise EstimationError("too few complete rows for pooled importance")
    X, y = X[ok], y[ok]
    dates = frame["date"].to_numpy()[ok]
    fit = fit_shrinkage(X, y, "lasso", columns=PREDICTORS, dates=dates,
                        n_splits=n_splits, grid=grid)
    out = pd.DataFrame({"feature": PREDICTORS,
                        "coefficient": fit.coef})
    out.attrs["lambda"] = fit.diagnostics["lambda"]
    out.attrs["n_rows"] = int(ok.sum())
    out.attrs["horizon"] = horizon
    return out


def cumulative_loss_differential(loss_benchmark: LossPanel,
                                 loss_challenger: LossPanel) -> pd.DataFrame:
    """Running sum of the per-date mean differential (benchmark - challenger)."""
    a = loss_benchmark.frame.set_index(["date", "ticker"])["loss"]
    b = loss_challenger.frame.set_index(["date", "ticker"])["loss"]
    joint = pd.DataFrame({"bench": a, "model": b}).dropna()
    diff = (joint["bench"] - joint["model"]).groupby(level="date").mean()
    out = pd.DataFrame({"date": diff.index, "differential": diff.to_numpy()})
    out["cumulative"] = out["differential"].cumsum()
    return out
