"""Persistence feature construction.

Builds the per-(ticker, stride date) predictor table: the HAR block from
daily variance, lagged returns, the memory-estimate level / change /
variability / trend block, cross-sectional and sector aggregates of the
memory estimates, market-state columns, and interaction terms, together
with auxiliary diagnostics and the forecast targets. Every value at a
stride date uses only data dated at or before that date.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import ingest
from .errors import ConfigError, DataError
from .ingest import ReturnPanel, VolPanel
from .memest import MemoryPanel

log = logging.getLogger(__name__)

PREDICTORS = [
    "har_d_log", "har_w_log", "har_m_log", "ret_lag1", "ret_lag1_abs",
    "d_gph", "delta_d_gph", "vol_d_gph", "trend_d_gph", "h", "delta_h",
    "cs_mean_d", "cs_std_d", "sector_mean_d", "vix", "move",
    "d_x_vix", "d_x_move",
]
AUXILIARY = ["cs_skew_d", "cs_kurt_d", "cs_share_d_gt_030", "cs_range_d",
             "d_over_liq"]
TARGET_COLUMNS = ["y_h1", "y_h5", "y_h22"]
KEY_COLUMNS = ["date", "ticker", "day_index"]
ALL_COLUMNS = KEY_COLUMNS + PREDICTORS + AUXILIARY + TARGET_COLUMNS

DEFAULT_K_DYNAMICS = 12
DEFAULT_TAU = 0.30


@dataclass(frozen=True)
class FeaturePanel:
    """Long table keyed by (date, ticker) with the fixed column contract."""

    frame: pd.DataFrame
    k_dynamics: int = DEFAULT_K_DYNAMICS
    tau: float = DEFAULT_TAU

    @property
    def stride_dates(self) -> pd.DatetimeIndex:
        return pd.DatetimeIndex(self.frame["date"].unique()).sort_values()


def _rolling_trend(values: np.ndarray, k: int) -> np.ndarray:
    """Rolling OLS slope of the last k values against 0..k-1."""
    x = np.arange(k, dtype=float)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    out = np.full(values.size, np.nan)
    for i in range(k - 1, values.size):
        window = values[i - k + 1:i + 1]
        if np.isfinite(window).all():
            out[i] = float(xc @ window) / sxx
    return out


def stock_dynamics(memory: MemoryPanel,
                   k: int = DEFAULT_K_DYNAMICS) -> pd.DataFrame:
    """Per-(ticker, date) change, variability, and trend of the estimates.

    delta columns difference consecutive stride records; the variability and
    trend columns need k consecutive records and are missing before that.
    """
    if k < 2:
        raise ConfigError(f"dynamics window must be >= 2, got {k}")
    parts = []
    for ticker, group in memory.frame.groupby("ticker", sort=True):
        group = group.sort_values("date")
        d = group["d_gph"].to_numpy(dtype=float)
        hurst = group["hurst"].to_numpy(dtype=float)
        part = pd.DataFrame({
            "date": group["date"].to_numpy(),
            "ticker": ticker,
            "delta_d_gph": np.concatenate([[np.nan], np.diff(d)]),
            "vol_d_gph": pd.Series(d).rolling(k).std(ddof=1).to_numpy(),
            "trend_d_gph": _rolling_trend(d, k),
            "h": hurst,
            "delta_h": np.concatenate([[np.nan], np.diff(hurst)]),
        })
        parts.append(part)
    return pd.concat(parts, ignore_index=True)


def cross_sectional_and_sector(memory: MemoryPanel, sectors: dict,
                               tau: float = DEFAULT_TAU):
    """Per-date aggregates of d_gph and per-(sector, date) means.

    Returns (per_date frame, per_sector_date frame). The standard deviation
    needs two stocks, skewness three, kurtosis four; otherwise missing.
    """
    frame = memory.frame
    grouped = frame.groupby("date")["d_gph"]
    per_date = pd.DataFrame({
        "cs_mean_d": grouped.mean(),
        "cs_std_d": grouped.std(ddof=1),
        "cs_skew_d": grouped.skew(),
        "cs_kurt_d": grouped.apply(pd.Series.kurt),
        "cs_share_d_gt_030": grouped.apply(lambda s: float((s > tau).mean())),
        "cs_range_d": grouped.max() - grouped.min(),
    }).reset_index()

    missing = sorted(set(frame["ticker"]) - set(sectors))
    if missing:
        raise DataError(f"tickers without a sector entry: {missing}")
    with_sector = frame[["date", "ticker", "d_gph"]].copy()
    with_sector["sector"] = with_sector["ticker"].map(sectors)
    per_sector = (with_sector.groupby(["sector", "date"])["d_gph"]
                  .mean().rename("sector_mean_d").reset_index())
    return per_date, per_sector


def assemble_features(vol: VolPanel, returns: ReturnPanel,
                      memory: MemoryPanel, sectors: dict,
                      market: pd.DataFrame,
                      targets: dict | None = None,
                      liquidity: pd.Series | None = None,
                      k_dynamics: int = DEFAULT_K_DYNAMICS,
                      tau: float = DEFAULT_TAU) -> FeaturePanel:
    """Join all predictor blocks into one long table on (date, ticker).

    `targets` maps horizon -> TargetPanel; horizons 1, 5, 22 are computed
    from `vol` when not supplied. `liquidity` defaults to missing (the
    d_over_liq auxiliary is then missing too).
    """
    rv = vol.rv
    dates = rv.index
    if targets is None:
        targets = {h: ingest.forecast_target(vol, h) for h in (1, 5, 22)}
    for h in (1, 5, 22):
        if h not in targets:
            raise ConfigError(f"missing target panel for horizon {h}")

    base = memory.frame[["date", "ticker", "d_gph"]].copy()
    day_index = pd.Series(np.arange(len(dates)), index=dates)
    base["day_index"] = base["date"].map(day_index)
    if base["day_index"].isna().any():
        raise DataError("memory panel contains dates absent from the vol panel")
    base["day_index"] = base["day_index"].astype(int)

    # HAR block: any zero variance inside the widest trailing window kills
    # the row's HAR logs (log of zero undefined; missing, not an error)
    zero_inside = (rv == 0).rolling(22, min_periods=1).max()
    with np.errstate(divide="ignore", invalid="ignore"):
        har_d = np.log(rv.where(rv > 0)).where(zero_inside == 0)
        har_w = np.log(rv.rolling(5).mean()).where(zero_inside == 0)
        har_m = np.log(rv.rolling(22).mean()).where(zero_inside == 0)

    ret_ff = returns.r.reindex(dates).ffill()

    def _cell_lookup(wide: pd.DataFrame, name: str) -> pd.Series:
        stacked = wide.stack(future_stack=True)
        stacked.name = name
        pairs = pd.MultiIndex.from_arrays([base["date"], base["ticker"]])
        return pd.Series(stacked.reindex(pairs).to_numpy(), index=base.index,
                         name=name)

    base["har_d_log"] = _cell_lookup(har_d, "har_d_log")
    base["har_w_log"] = _cell_lookup(har_w, "har_w_log")
    base["har_m_log"] = _cell_lookup(har_m, "har_m_log")
    base["ret_lag1"] = _cell_lookup(ret_ff, "ret_lag1")
    base["ret_lag1_abs"] = base["ret_lag1"].abs()

    dynamics = stock_dynamics(memory, k_dynamics)
    base = base.merge(dynamics, on=["date", "ticker"], how="left")

    per_date, per_sector = cross_sectional_and_sector(memory, sectors, tau)
    base = base.merge(per_date, on="date", how="left")
    base["sector"] = base["ticker"].map(sectors)
    base = base.merge(per_sector, on=["sector", "date"], how="left")
    base = base.drop(columns=["sector"])

    market_at = market.reindex(pd.DatetimeIndex(base["date"]))
    for name, col in [("vix", "VIX"), ("move", "MOVE")]:
        if col not in market.columns:
            raise DataError(f"market panel lacks required series {col!r}")
        base[name] = market_at[col].to_numpy()
    base["d_x_vix"] = base["d_gph"] * base["vix"]
    base["d_x_move"] = base["d_gph"] * base["move"]

    if liquidity is None:
        base["d_over_liq"] = np.nan
    else:
        base["d_over_liq"] = base["d_gph"] * base["ticker"].map(liquidity)

    for h in (1, 5, 22):
        base[f"y_h{h}"] = _cell_lookup(targets[h].y, f"y_h{h}").to_numpy()

    frame = base[ALL_COLUMNS].sort_values(["date", "ticker"],
                                          ignore_index=True)
    return FeaturePanel(frame=frame, k_dynamics=k_dynamics, tau=tau)


def save_feature_panel(panel: FeaturePanel, path) -> None:
    out = panel.frame.copy()
    out["date"] = out["date"].dt.strftime("%Y-%m-%d")
    out.to_csv(path, index=False)


def load_feature_panel(path, k_dynamics: int = DEFAULT_K_DYNAMICS,
                       tau: float = DEFAULT_TAU) -> FeaturePanel:
    frame = pd.read_csv(path, float_precision="round_trip")
    if list(frame.columns) != ALL_COLUMNS:
        raise DataError(f"{path}: unexpected feature panel header")
    frame["date"] = pd.to_datetime(frame["date"], format="%Y-%m-%d")
    return FeaturePanel(frame=frame, k_dynamics=k_dynamics, tau=tau)
