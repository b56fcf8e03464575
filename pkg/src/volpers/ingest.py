"""Load, validate, and transform raw price/market/sector data into panels.

All panel types wrap pandas objects indexed by trading date with one column
per ticker. Operations never impute: missing cells stay missing and
propagate through returns, variances, and targets, so downstream estimators
see only observed data.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

PRICES_HEADER = ["date", "ticker", "open", "high", "low", "close", "volume"]
MARKET_HEADER = ["date", "series", "value"]
SECTORS_HEADER = ["ticker", "sector"]
REQUIRED_MARKET_SERIES = ["VIX", "MOVE"]
MARKET_FFILL_LIMIT = 5

PARKINSON_DENOM = 4.0 * math.log(2.0)


@dataclass(frozen=True)
class MarketPanel:
    """Aligned date x ticker OHLCV matrices plus market series and sectors."""

    open: pd.DataFrame
    high: pd.DataFrame
    low: pd.DataFrame
    close: pd.DataFrame
    volume: pd.DataFrame
    market: pd.DataFrame
    sectors: dict

    @property
    def dates(self) -> pd.DatetimeIndex:
        return self.close.index

    @property
    def stocks(self) -> list:
        return list(self.close.columns)


@dataclass(frozen=True)
class ReturnPanel:
    """Daily log returns, winsorized per stock at recorded percentile bounds."""

    r: pd.DataFrame
    winsor_bounds: dict

    @property
    def dates(self) -> pd.DatetimeIndex:
        return self.r.index

    @property
    def stocks(self) -> list:
        return list(self.r.columns)


@dataclass(frozen=True)
class VolPanel:
    """Daily variance proxy panel."""

    rv: pd.DataFrame
    proxy_kind: str = "parkinson"

    @property
    def dates(self) -> pd.DatetimeIndex:
        return self.rv.index

    @property
    def stocks(self) -> list:
        return list(self.rv.columns)


@dataclass(frozen=True)
class TargetPanel:
    """Log mean future variance at a fixed horizon."""

    horizon: int
    y: pd.DataFrame
    proxy_kind: str = "parkinson"
    n_zero_mean: int = 0


def _parse_float_column(values: pd.Series, column: str, path) -> np.ndarray:
    """Convert strings to floats, empty -> NaN, anything else is an error."""
    raw = values.astype(object).where(values.notna(), "")
    stripped = raw.astype(str).str.strip()
    # float() is correctly rounded; the pandas fast parser can drift one ulp,
    # which would break the lossless CSV round trip
    out = np.empty(len(stripped))
    for row, text in enumerate(stripped):
        if text == "":
            out[row] = np.nan
            continue
        try:
            out[row] = float(text)
        except ValueError:
            # +2: one for the header line, one for 1-based numbering
            raise DataError(
                f"{path}: malformed value {text!r} in column "
                f"{column!r} at line {row + 2}"
            )
    return out


def _read_csv_checked(path, header: list) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise DataError(f"input file not found: {path}")
    except pd.errors.ParserError as exc:
        raise DataError(f"{path}: parse error: {exc}")
    if list(frame.columns) != header:
        raise DataError(
            f"{path}: expected header {','.join(header)!r}, "
            f"got {','.join(frame.columns)!r}"
        )
    return frame


def _parse_dates(values: pd.Series, path) -> pd.DatetimeIndex:
    parsed = pd.to_datetime(values, format="%Y-%m-%d", errors="coerce")
    bad = parsed.isna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataError(
            f"{path}: malformed date {values.iloc[row]!r} at line {row + 2}"
        )
    return pd.DatetimeIndex(parsed)


def load_market_panel(prices_path, market_path, sectors_path,
                      min_coverage: float = 0.70) -> MarketPanel:
    """Load the three input CSVs into an aligned, validated MarketPanel.

    Stocks whose non-missing close coverage over the union of price dates is
    below ``min_coverage`` are dropped. Market series are forward-filled at
    most 5 trading days, beyond that they stay missing.
    """
    if not 0 < min_coverage <= 1:
        raise ConfigError(f"min_coverage must be in (0, 1], got {min_coverage}")

    raw = _read_csv_checked(prices_path, PRICES_HEADER)
    dates = _parse_dates(raw["date"], prices_path)
    tickers = raw["ticker"].astype(str)
    cols = {}
    for name in ["open", "high", "low", "close", "volume"]:
        cols[name] = _parse_float_column(raw[name], name, prices_path)

    key = pd.MultiIndex.from_arrays([dates, tickers], names=["date", "ticker"])
    if key.has_duplicates:
        dup = key[key.duplicated()][0]
        raise DataError(
            f"{prices_path}: duplicate (date, ticker) entry "
            f"({dup[0].date()}, {dup[1]})"
        )

    panels = {}
    for name, values in cols.items():
        wide = pd.Series(values, index=key).unstack("ticker")
        panels[name] = wide.sort_index()
    all_dates = panels["close"].index

    coverage = panels["close"].notna().mean(axis=0)
    kept = coverage[coverage >= min_coverage].index.tolist()
    dropped = sorted(set(panels["close"].columns) - set(kept))
    if dropped:
        log.info("coverage filter dropped %d stocks: %s", len(dropped), dropped)
    if not kept:
        raise ConfigError(
            f"no stocks satisfy min_coverage={min_coverage}; universe is empty"
        )
    kept = sorted(kept)
    panels = {name: frame[kept] for name, frame in panels.items()}

    _validate_ohlc(panels, prices_path)

    mraw = _read_csv_checked(market_path, MARKET_HEADER)
    mdates = _parse_dates(mraw["date"], market_path)
    mvalues = _parse_float_column(mraw["value"], "value", market_path)
    market = (
        pd.Series(mvalues, index=pd.MultiIndex.from_arrays(
            [mdates, mraw["series"].astype(str)]))
        .unstack()
        .sort_index()
    )
    missing_series = [s for s in REQUIRED_MARKET_SERIES if s not in market.columns]
    if missing_series:
        raise DataError(
            f"{market_path}: required market series missing: {missing_series}"
        )
    market = market.reindex(all_dates).ffill(limit=MARKET_FFILL_LIMIT)

    sraw = _read_csv_checked(sectors_path, SECTORS_HEADER)
    sectors = dict(zip(sraw["ticker"].astype(str), sraw["sector"].astype(str)))
    no_sector = [t for t in kept if t not in sectors]
    if no_sector:
        raise DataError(f"{sectors_path}: tickers without a sector: {no_sector}")
    sectors = {t: sectors[t] for t in kept}

    return MarketPanel(open=panels["open"], high=panels["high"],
                       low=panels["low"], close=panels["close"],
                       volume=panels["volume"], market=market, sectors=sectors)


def _validate_ohlc(panels: dict, path) -> None:
    o, h, l, c = panels["open"], panels["high"], panels["low"], panels["close"]

    def _first_violation(mask: pd.DataFrame):
        stacked = mask.stack()
        hits = stacked[stacked]
        return None if hits.empty else hits.index[0]

    bad = _first_violation((l <= 0) & l.notna())
    if bad is not None:
        raise DataError(f"{path}: non-positive low at ({bad[0].date()}, {bad[1]})")
    for other, name in [(o, "open"), (c, "close")]:
        bad = _first_violation((h < other) & h.notna() & other.notna())
        if bad is not None:
            raise DataError(
                f"{path}: high < {name} at ({bad[0].date()}, {bad[1]})")
        bad = _first_violation((l > other) & l.notna() & other.notna())
        if bad is not None:
            raise DataError(
                f"{path}: low > {name} at ({bad[0].date()}, {bad[1]})")


def save_market_panel(panel: MarketPanel, prices_path, market_path,
                      sectors_path) -> None:
    """Write a MarketPanel back to the three CSV formats (lossless)."""
    frames = {"open": panel.open, "high": panel.high, "low": panel.low,
              "close": panel.close, "volume": panel.volume}
    long = pd.DataFrame({
        name: frame.stack(future_stack=True) for name, frame in frames.items()
    })
    long = long.dropna(how="all")
    long.index.names = ["date", "ticker"]
    long = long.reset_index()
    long["date"] = long["date"].dt.strftime("%Y-%m-%d")
    long[PRICES_HEADER].to_csv(prices_path, index=False)

    market = panel.market.stack(future_stack=True).dropna().reset_index()
    market.columns = ["date", "series", "value"]
    market["date"] = market["date"].dt.strftime("%Y-%m-%d")
    market.to_csv(market_path, index=False)

    pd.DataFrame(
        {"ticker": list(panel.sectors), "sector": list(panel.sectors.values())}
    ).to_csv(sectors_path, index=False)


def to_log_returns(panel: MarketPanel, lo_pct: float = 0.001,
                   hi_pct: float = 0.999) -> ReturnPanel:
    """Daily log returns winsorized per stock at the given percentiles.

    Returns exist only where both today's and yesterday's closes are present;
    gaps are not bridged. Percentiles use the linear-interpolation definition
    and the bounds actually applied are recorded on the result.
    """
    if not 0 <= lo_pct < hi_pct <= 1:
        raise ConfigError(
            f"need 0 <= lo_pct < hi_pct <= 1, got ({lo_pct}, {hi_pct})")
    close = panel.close
    bad = (close <= 0) & close.notna()
    if bad.to_numpy().any():
        stacked = bad.stack()
        cell = stacked[stacked].index[0]
        raise DataError(
            f"non-positive close at ({cell[0].date()}, {cell[1]})")
    enough = close.notna().sum(axis=0)
    thin = enough[enough < 2].index.tolist()
    if thin:
        raise DataError(f"stocks with fewer than 2 closes: {thin}")

    logc = np.log(close)
    r = (logc - logc.shift(1)).iloc[1:]

    bounds = {}
    clipped = {}
    for ticker in r.columns:
        series = r[ticker]
        values = series.dropna().to_numpy()
        if values.size == 0:
            bounds[ticker] = (np.nan, np.nan)
            clipped[ticker] = series
            continue
        lo = float(np.percentile(values, 100 * lo_pct))
        hi = float(np.percentile(values, 100 * hi_pct))
        bounds[ticker] = (lo, hi)
        clipped[ticker] = series.clip(lower=lo, upper=hi)
    out = pd.DataFrame(clipped, index=r.index)[r.columns]
    return ReturnPanel(r=out, winsor_bounds=bounds)


def apply_winsor_bounds(returns: ReturnPanel) -> ReturnPanel:
    """Re-clamp a ReturnPanel at its own recorded bounds (idempotent)."""
    clipped = {}
    for ticker in returns.r.columns:
        lo, hi = returns.winsor_bounds[ticker]
        series = returns.r[ticker]
        if np.isnan(lo):
            clipped[ticker] = series
        else:
            clipped[ticker] = series.clip(lower=lo, upper=hi)
    out = pd.DataFrame(clipped, index=returns.r.index)[returns.r.columns]
    return ReturnPanel(r=out, winsor_bounds=dict(returns.winsor_bounds))


def parkinson_rv(panel: MarketPanel) -> VolPanel:
    """Range-based daily variance: (ln High - ln Low)^2 / (4 ln 2)."""
    h, l = panel.high, panel.low
    bad = (h < l) & h.notna() & l.notna()
    if bad.to_numpy().any():
        stacked = bad.stack()
        cell = stacked[stacked].index[0]
        raise DataError(f"high < low at ({cell[0].date()}, {cell[1]})")
    rv = (np.log(h) - np.log(l)) ** 2 / PARKINSON_DENOM
    return VolPanel(rv=rv, proxy_kind="parkinson")


def squared_return_vol(returns: ReturnPanel) -> VolPanel:
    """Alternative variance proxy: squared winsorized daily log returns."""
    return VolPanel(rv=returns.r ** 2, proxy_kind="squared_return")


def forecast_target(vol: VolPanel, h: int, proxy: str | None = None) -> TargetPanel:
    """y_t = log of the mean variance over the next h trading days.

    Missing whenever any of the h future values is missing or their mean is
    zero; zero-mean cases are counted on the result, not raised.
    """
    if h < 1:
        raise ConfigError(f"horizon must be >= 1, got {h}")
    if proxy is not None and proxy != vol.proxy_kind:
        raise ConfigError(
            f"requested proxy {proxy!r} but panel holds {vol.proxy_kind!r}")
    rv = vol.rv
    acc = rv.shift(-1).copy()
    for j in range(2, h + 1):
        acc = acc + rv.shift(-j)
    mean_future = acc / h
    zero = (mean_future == 0)
    n_zero = int(zero.to_numpy().sum())
    if n_zero:
        log.info("forecast_target h=%d: %d zero-mean cells set missing", h, n_zero)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(mean_future.where(~zero))
    return TargetPanel(horizon=h, y=y, proxy_kind=vol.proxy_kind,
                       n_zero_mean=n_zero)


def liquidity_measure(panel: MarketPanel) -> pd.Series:
    """Per-stock mean of inverse dollar volume (higher = less liquid).

    Zero-volume dates are skipped; a stock with no usable date gets NaN.
    """
    dollar = panel.close * panel.volume
    inv = 1.0 / dollar.where(dollar > 0)
    return inv.mean(axis=0)


def liquidity_halves(measure: pd.Series) -> dict:
    """Split stocks at the cross-sectional median of the measure.

    Stocks at or below the median (more liquid) map to 'liquid', the rest to
    'illiquid'; ties at the median deterministically go to 'liquid'.
    """
    usable = measure.dropna()
    if usable.empty:
        raise DataError("liquidity measure missing for every stock")
    med = float(usable.median())
    return {t: ("liquid" if v <= med else "illiquid") for t, v in usable.items()}
