"""Volatility-managed portfolio backtests.

Weekly rebalanced single-stock strategies scale a five-day forward return
by the inverse of its forecast variance, with a per-stock constant chosen
so the managed and unmanaged return series have identical in-sample
variance. Equal-weight portfolios of the scaled legs are summarized by
annualized mean, volatility, Sharpe ratio, maximum drawdown, and the
mean-variance certainty equivalent, on the full sample and within
volatility and crisis regimes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError
from .evaluation import COVID_SPAN, vix_quartile_groups

log = logging.getLogger(__name__)

PERIODS_PER_YEAR = 252.0 / 5.0
DEFAULT_RISK_AVERSION = 5.0
MIN_REGIME_PERIODS = 8
REPORT_COLUMNS = ["regime", "portfolio", "ann_ret", "ann_vol", "sharpe",
                  "max_dd", "cer"]
REGIMES = ("full", "vix_q1", "vix_q4", "covid")


@dataclass(frozen=True)
class ManagedPanel:
    """Per-stock managed legs for one forecast model at horizon five."""

    model_id: str
    raw: pd.DataFrame      # date x ticker forward five-day simple returns
    managed: pd.DataFrame  # same shape, variance-matched managed returns
    scale: pd.Series       # per-ticker multiplier c
    excluded: list = field(default_factory=list)


def five_day_forward_returns(log_returns: pd.DataFrame,
                             dates) -> pd.DataFrame:
    """Simple returns over the five trading days after each anchor date.

    For anchor t the window is rows t+1 .. t+5 of the daily panel:
    exp(sum of log returns) - 1. Any missing day inside the window, or a
    window running off the end of the sample, yields a missing value.
    """
    dates = pd.DatetimeIndex(dates)
    missing = dates.difference(log_returns.index)
    if len(missing):
        raise DataError(
            f"anchor date {missing[0].date()} not in the daily return panel")
    forward = log_returns.rolling(5).sum().shift(-5)
    return np.expm1(forward.reindex(dates))


def managed_returns(forecast_set, log_returns: pd.DataFrame) -> ManagedPanel:
    """Variance-matched managed legs from five-day variance forecasts.

    The raw leg is r / exp(y_pred); the per-stock constant c equals the
    ratio of unmanaged to raw-leg standard deviation over the dates where
    both exist, so managed and unmanaged variances agree exactly on that
    support. Stocks whose raw leg has fewer than two observations or zero
    spread are excluded and listed.
    """
    if forecast_set.horizon != 5:
        raise ConfigError(
            f"managed portfolios need horizon-5 forecasts, got h="
            f"{forecast_set.horizon}")
    pred = forecast_set.frame.pivot(index="date", columns="ticker",
                                    values="y_pred")
    raw = five_day_forward_returns(log_returns, pred.index)
    raw = raw.reindex(columns=pred.columns)
    leg = raw / np.exp(pred)

    scale = {}
    excluded = []
    for ticker in pred.columns:
        joint = pd.DataFrame({"raw": raw[ticker],
                              "leg": leg[ticker]}).dropna()
        if len(joint) < 2:
            excluded.append(ticker)
            continue
        sd_raw = float(joint["raw"].std(ddof=1))
        sd_leg = float(joint["leg"].std(ddof=1))
        if sd_leg == 0.0:
            excluded.append(ticker)
            continue
        scale[ticker] = sd_raw / sd_leg
    if excluded:
        log.warning("excluded %d stocks with degenerate managed legs: %s",
                    len(excluded), excluded)
    keep = [t for t in pred.columns if t in scale]
    scale = pd.Series(scale, dtype=float)
    managed = leg[keep] * scale
    return ManagedPanel(model_id=forecast_set.model_id,
                        raw=raw[keep], managed=managed, scale=scale,
                        excluded=excluded)


def equal_weight_path(panel: pd.DataFrame) -> pd.Series:
    """Equal-weight portfolio return per date over the stocks with data."""
    path = panel.mean(axis=1, skipna=True)
    return path.dropna()


def max_drawdown(path: pd.Series) -> float:
    """Worst peak-to-trough loss of the compounded wealth curve, in [-1, 0]."""
    wealth = (1.0 + path).cumprod()
    peak = wealth.cummax()
    return float((wealth / peak - 1.0).min())


def portfolio_metrics(path: pd.Series,
                      gamma: float = DEFAULT_RISK_AVERSION) -> dict:
    """Annualized summary of a five-day-period return series.

    Means scale by 252/5 periods per year and volatility by its square
    root. The Sharpe ratio is mean over volatility with no risk-free
    adjustment and is missing when the volatility is zero. The certainty
    equivalent is ann. mean - (gamma/2) * ann. variance.
    """
    r = path.to_numpy(dtype=float)
    if r.size < 2:
        raise DataError(f"need at least 2 periods, got {r.size}")
    mean = float(r.mean())
    var = float(r.var(ddof=1))
    ann_ret = mean * PERIODS_PER_YEAR
    ann_var = var * PERIODS_PER_YEAR
    ann_vol = float(np.sqrt(ann_var))
    sharpe = ann_ret / ann_vol if ann_vol > 0 else float("nan")
    return {
        "ann_ret": ann_ret,
        "ann_vol": ann_vol,
        "sharpe": sharpe,
        "max_dd": max_drawdown(path),
        "cer": ann_ret - 0.5 * gamma * ann_var,
        "n_periods": int(r.size),
    }


def regime_masks(dates, market: pd.DataFrame | None) -> dict:
    """Date masks for the reporting regimes.

    VIX quartiles are computed over the portfolio dates themselves; the
    covid regime is the fixed 2020-03-01 .. 2020-12-31 window.
    """
    dates = pd.DatetimeIndex(dates)
    masks = {"full": pd.Series(True, index=dates)}
    if market is not None:
        quart = vix_quartile_groups(dates, market)
        masks["vix_q1"] = quart == "q1"
        masks["vix_q4"] = quart == "q4"
    masks["covid"] = pd.Series(
        (dates >= COVID_SPAN[0]) & (dates <= COVID_SPAN[1]), index=dates)
    return masks


def portfolio_report(forecast_sets: dict, log_returns: pd.DataFrame,
                     market: pd.DataFrame | None = None,
                     gamma: float = DEFAULT_RISK_AVERSION) -> pd.DataFrame:
    """Regime-by-portfolio metric table.

    One unmanaged row set (model independent, equal weight over every stock
    with a complete forward window) plus one per forecast model. Regimes
    with fewer than eight periods are omitted.
    """
    if not forecast_sets:
        raise ConfigError("no forecast sets supplied")
    paths = {}
    anchor_union = None
    for model_id, fs in forecast_sets.items():
        panel = managed_returns(fs, log_returns)
        paths[model_id] = equal_weight_path(panel.managed)
        dates = pd.DatetimeIndex(fs.frame["date"].unique())
        anchor_union = dates if anchor_union is None \
            else anchor_union.union(dates)
    raw_all = five_day_forward_returns(
        log_returns, anchor_union.sort_values())
    paths = {"unmanaged": equal_weight_path(raw_all), **paths}

    rows = []
    for name, path in paths.items():
        masks = regime_masks(path.index, market)
        for regime in REGIMES:
            if regime not in masks:
                continue
            sub = path[masks[regime].to_numpy()]
            if len(sub) < MIN_REGIME_PERIODS:
                log.info("regime %s has %d periods; omitted", regime,
                         len(sub))
                continue
            metrics = portfolio_metrics(sub, gamma=gamma)
            rows.append({"regime": regime, "portfolio": name,
                         "ann_ret": metrics["ann_ret"],
                         "ann_vol": metrics["ann_vol"],
                         "sharpe": metrics["sharpe"],
                         "max_dd": metrics["max_dd"],
                         "cer": metrics["cer"]})
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def save_portfolio_report(report: pd.DataFrame, path) -> None:
    report.to_csv(path, index=False, float_format="%.10g")


def load_portfolio_report(path) -> pd.DataFrame:
    frame = pd.read_csv(path, float_precision="round_trip")
    if list(frame.columns) != REPORT_COLUMNS:
        raise DataError(f"unexpected portfolio report header in {path}")
    return frame
