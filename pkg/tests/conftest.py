"""Shared fixtures: one small synthetic market panel and its derived objects.

Everything heavy is session-scoped so the per-module suites reuse a single
simulation, rolling-estimation, and feature-assembly pass.
"""

import numpy as np
import pandas as pd
import pytest

from volpers import ingest, memest, synth
from volpers.features import assemble_features


@pytest.fixture(scope="session")
def demo_small():
    panel, state = synth.demo_market_panel(
        "coupled", n_stocks=6, n_days=1000, seed=7, return_state=True)
    return panel, state


@pytest.fixture(scope="session")
def panel_small(demo_small):
    return demo_small[0]


@pytest.fixture(scope="session")
def vol_small(panel_small):
    return ingest.parkinson_rv(panel_small)


@pytest.fixture(scope="session")
def returns_small(panel_small):
    return ingest.to_log_returns(panel_small)


@pytest.fixture(scope="session")
def memory_small(vol_small):
    return memest.rolling_memory(vol_small, window=750, stride=5)


@pytest.fixture(scope="session")
def features_small(panel_small, vol_small, returns_small, memory_small):
    return assemble_features(
        vol_small, returns_small, memory_small, panel_small.sectors,
        panel_small.market, liquidity=ingest.liquidity_measure(panel_small))


def frames_to_panel(close: pd.DataFrame, high: pd.DataFrame | None = None,
                    low: pd.DataFrame | None = None,
                    volume: pd.DataFrame | None = None,
                    market: pd.DataFrame | None = None,
                    sectors: dict | None = None) -> ingest.MarketPanel:
    """Assemble a MarketPanel from hand-built wide frames."""
    if high is None:
        high = close
    if low is None:
        low = close
    if volume is None:
        volume = pd.DataFrame(1e6, index=close.index, columns=close.columns)
    if market is None:
        market = pd.DataFrame({"VIX": 20.0, "MOVE": 90.0}, index=close.index)
    if sectors is None:
        sectors = {t: "Financials" for t in close.columns}
    return ingest.MarketPanel(open=close, high=high, low=low, close=close,
                              volume=volume, market=market, sectors=sectors)


def wide(values, tickers=("AAA",), start="2020-01-01") -> pd.DataFrame:
    """Column-replicated wide frame over a business-day index."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = np.repeat(arr[:, None], len(tickers), axis=1)
    dates = pd.bdate_range(start, periods=arr.shape[0])
    return pd.DataFrame(arr, index=dates, columns=list(tickers))
