"""Loading, returns, range-based variance, targets, and liquidity."""

import math

import numpy as np
import pandas as pd
import pytest

from volpers import ingest
from volpers.errors import ConfigError, DataError

from conftest import frames_to_panel, wide

PARKINSON_DENOM = 4.0 * math.log(2.0)


def write_inputs(tmp_path, prices_rows, market_rows=None, sectors_rows=None):
    prices = tmp_path / "prices.csv"
    market = tmp_path / "market.csv"
    sectors = tmp_path / "sectors.csv"
    prices.write_text("date,ticker,open,high,low,close,volume\n"
                      + "\n".join(prices_rows) + "\n")
    if market_rows is None:
        dates = sorted({row.split(",")[0] for row in prices_rows})
        market_rows = [f"{d},VIX,20.0" for d in dates] \
            + [f"{d},MOVE,90.0" for d in dates]
    market.write_text("date,series,value\n" + "\n".join(market_rows) + "\n")
    if sectors_rows is None:
        tickers = sorted({row.split(",")[1] for row in prices_rows})
        sectors_rows = [f"{t},Financials" for t in tickers]
    sectors.write_text("ticker,sector\n" + "\n".join(sectors_rows) + "\n")
    return prices, market, sectors


def price_row(date, ticker, close, high=None, low=None, volume=1000):
    high = close if high is None else high
    low = close if low is None else low
    return f"{date},{ticker},{close},{high},{low},{close},{volume}"


# ---------------------------------------------------------------- loading


def test_load_identity_single_stock(tmp_path):
    rows = [price_row(f"2020-01-{d:02d}", "AAA", 100 + d) for d in (1, 2, 3)]
    paths = write_inputs(tmp_path, rows)
    panel = ingest.load_market_panel(*paths, min_coverage=1.0)
    assert panel.stocks == ["AAA"]
    assert list(panel.close["AAA"]) == [101.0, 102.0, 103.0]
    assert len(panel.dates) == 3


def test_load_coverage_filter_brute_force(tmp_path):
    # AAA and BBB complete over 10 dates, CCC present on 5 of 10
    dates = [f"2020-03-{d:02d}" for d in range(2, 12)]
    rows = []
    for i, d in enumerate(dates):
        rows.append(price_row(d, "AAA", 100 + i))
        rows.append(price_row(d, "BBB", 50 + i))
        if i % 2 == 0:
            rows.append(price_row(d, "CCC", 10 + i))
    paths = write_inputs(tmp_path, rows)
    panel = ingest.load_market_panel(*paths, min_coverage=0.7)
    assert sorted(panel.stocks) == ["AAA", "BBB"]

    # independent line-scan oracle over the raw CSV text
    text = paths[0].read_text().splitlines()[1:]
    count = {}
    for line in text:
        fields = line.split(",")
        if fields[5] != "":
            count[fields[1]] = count.get(fields[1], 0) + 1
    n_dates = len({line.split(",")[0] for line in text})
    keep = sorted(t for t, c in count.items() if c / n_dates >= 0.7)
    assert sorted(panel.stocks) == keep


def test_load_empty_universe_config_error(tmp_path):
    dates = [f"2020-03-{d:02d}" for d in range(2, 12)]
    rows = [price_row(d, "AAA", 100) for d in dates[:6]]
    rows += [price_row(d, "BBB", 50) for d in dates[4:]]
    paths = write_inputs(tmp_path, rows)
    with pytest.raises(ConfigError):
        ingest.load_market_panel(*paths, min_coverage=0.99)


def test_load_duplicate_cell_data_error(tmp_path):
    rows = [price_row("2020-01-02", "AAA", 100),
            price_row("2020-01-02", "AAA", 101),
            price_row("2020-01-03", "AAA", 102)]
    paths = write_inputs(tmp_path, rows)
    with pytest.raises(DataError):
        ingest.load_market_panel(*paths)


def test_load_malformed_number_names_line(tmp_path):
    rows = [price_row("2020-01-02", "AAA", 100),
            "2020-01-03,AAA,1,1,1,oops,5"]
    paths = write_inputs(tmp_path, rows)
    with pytest.raises(DataError):
        ingest.load_market_panel(*paths)


def test_market_forward_fill_capped_at_five_days(tmp_path):
    dates = [f"2020-01-{d:02d}" for d in range(1, 11)]
    rows = [price_row(d, "AAA", 100 + i) for i, d in enumerate(dates)]
    # VIX observed only on the first date; MOVE on every date
    market_rows = [f"{dates[0]},VIX,33.0"] + [f"{d},MOVE,90.0" for d in dates]
    paths = write_inputs(tmp_path, rows, market_rows=market_rows)
    panel = ingest.load_market_panel(*paths)
    vix = panel.market["VIX"]
    assert (vix.iloc[:6] == 33.0).all()  # observed + 5 filled days
    assert vix.iloc[6:].isna().all()


def test_round_trip_bit_identical(panel_small, tmp_path):
    paths = (tmp_path / "p.csv", tmp_path / "m.csv", tmp_path / "s.csv")
    ingest.save_market_panel(panel_small, *paths)
    back = ingest.load_market_panel(*paths, min_coverage=0.5)
    for name in ("open", "high", "low", "close", "volume", "market"):
        ours = getattr(panel_small, name)
        # the loader lays columns out alphabetically; cells must be exact
        pd.testing.assert_frame_equal(getattr(back, name)[ours.columns],
                                      ours, check_exact=True,
                                      check_freq=False, check_names=False)
    assert back.sectors == panel_small.sectors

    # a second write/load cycle reproduces the loaded panel exactly
    paths2 = (tmp_path / "p2.csv", tmp_path / "m2.csv", tmp_path / "s2.csv")
    ingest.save_market_panel(back, *paths2)
    again = ingest.load_market_panel(*paths2, min_coverage=0.5)
    for name in ("open", "high", "low", "close", "volume", "market"):
        pd.testing.assert_frame_equal(getattr(again, name),
                                      getattr(back, name),
                                      check_exact=True, check_freq=False)
    assert again.sectors == back.sectors


# ---------------------------------------------------------------- returns


def test_two_point_return():
    panel = frames_to_panel(wide([100.0, 110.0]))
    rp = ingest.to_log_returns(panel)
    assert rp.r.shape[0] == 1  # first date has no prior close
    assert rp.r.iloc[0, 0] == pytest.approx(math.log(1.1), abs=1e-15)


def test_constant_price_zero_returns_winsor_noop():
    panel = frames_to_panel(wide([100.0] * 50))
    rp = ingest.to_log_returns(panel)
    assert (rp.r.iloc[:, 0] == 0.0).all()
    lo, hi = rp.winsor_bounds["AAA"]
    assert lo == 0.0 and hi == 0.0


def test_winsor_bounds_match_sort_oracle():
    rng = np.random.default_rng(42)
    r = rng.standard_normal(1000) * 0.01
    close = 100.0 * np.exp(np.concatenate([[0.0], np.cumsum(r)]))
    panel = frames_to_panel(wide(close))
    rp = ingest.to_log_returns(panel, lo_pct=0.01, hi_pct=0.99)
    got = rp.r.iloc[:, 0].to_numpy()
    lo, hi = np.quantile(r, [0.01, 0.99])  # sort-based linear interpolation
    assert got.min() == pytest.approx(lo, rel=1e-9)
    assert got.max() == pytest.approx(hi, rel=1e-9)
    inner = (r > lo) & (r < hi)
    np.testing.assert_allclose(got[inner], r[inner], rtol=1e-12, atol=1e-14)


def test_winsor_clamp_idempotent(returns_small):
    again = ingest.apply_winsor_bounds(returns_small)
    pd.testing.assert_frame_equal(again.r, returns_small.r, check_exact=True)


def test_nonpositive_close_data_error():
    panel = frames_to_panel(wide([100.0, -1.0, 101.0]))
    with pytest.raises(DataError):
        ingest.to_log_returns(panel)


# ------------------------------------------------------ range-based variance


def test_parkinson_zero_range():
    panel = frames_to_panel(wide([100.0] * 3))
    rv = ingest.parkinson_rv(panel).rv
    assert (rv == 0.0).all().all()


def test_parkinson_unit_log_range():
    close = wide([100.0] * 3)
    panel = frames_to_panel(close, high=close * math.e, low=close)
    rv = ingest.parkinson_rv(panel).rv
    np.testing.assert_allclose(rv.to_numpy(), 1.0 / PARKINSON_DENOM,
                               rtol=1e-12)


def test_parkinson_scale_invariance():
    rng = np.random.default_rng(3)
    close = wide(100.0 * np.exp(rng.standard_normal(40) * 0.02))
    high = close * np.exp(np.abs(rng.standard_normal(close.shape)) * 0.01)
    low = close / np.exp(np.abs(rng.standard_normal(close.shape)) * 0.01)
    base = ingest.parkinson_rv(frames_to_panel(close, high=high, low=low)).rv
    for k in (1e-3, 7.0, 1e4):
        scaled = ingest.parkinson_rv(
            frames_to_panel(close * k, high=high * k, low=low * k)).rv
        np.testing.assert_allclose(scaled.to_numpy(), base.to_numpy(),
                                    rtol=1e-9, atol=1e-20)


def test_parkinson_high_below_low_data_error():
    close = wide([100.0, 100.0])
    panel = frames_to_panel(close, high=close - 1.0, low=close)
    with pytest.raises(DataError):
        ingest.parkinson_rv(panel)


# ------------------------------------------------------------------ targets


def make_vol(values) -> ingest.VolPanel:
    return ingest.VolPanel(rv=wide(values))


def test_target_h1_exponential_identity():
    vol = make_vol([1e-4, math.exp(-8.0), 1e-4])
    tp = ingest.forecast_target(vol, 1)
    assert tp.y.iloc[0, 0] == pytest.approx(-8.0, abs=1e-14)


def test_target_h1_equals_log_next_rv():
    rng = np.random.default_rng(11)
    vals = np.exp(rng.standard_normal(30) - 9.0)
    vol = make_vol(vals)
    tp = ingest.forecast_target(vol, 1)
    np.testing.assert_allclose(tp.y.iloc[:-1, 0].to_numpy(),
                               np.log(vals[1:]), rtol=1e-14)
    assert np.isnan(tp.y.iloc[-1, 0])


def test_target_h5_direct_arithmetic():
    vals = [9e-4] + [k * 1e-4 for k in (1, 2, 3, 4, 5)]
    tp = ingest.forecast_target(make_vol(vals), 5)
    assert tp.y.iloc[0, 0] == pytest.approx(math.log(3e-4), abs=1e-12)


def test_target_h22_boundary_missing():
    vol = make_vol(np.full(40, 2e-4))
    tp = ingest.forecast_target(vol, 22)
    y = tp.y.iloc[:, 0]
    assert y.iloc[-22:].isna().all()
    assert np.isfinite(y.iloc[: 40 - 22]).all()


def test_target_missing_addend_propagates():
    vals = np.full(30, 2e-4)
    vals[10] = np.nan
    tp = ingest.forecast_target(make_vol(vals), 5)
    y = tp.y.iloc[:, 0]
    assert y.iloc[5:10].isna().all()  # windows covering the gap
    assert np.isfinite(y.iloc[:5]).all()
    assert np.isfinite(y.iloc[10:25]).all()


def test_target_zero_mean_missing_not_error():
    vals = np.full(30, 2e-4)
    vals[10:16] = 0.0
    tp = ingest.forecast_target(make_vol(vals), 5)
    assert tp.n_zero_mean > 0
    assert tp.y.iloc[10, 0] != tp.y.iloc[10, 0]  # NaN


def test_squared_return_proxy(returns_small):
    vol = ingest.squared_return_vol(returns_small)
    np.testing.assert_allclose(vol.rv.to_numpy(),
                               (returns_small.r ** 2).to_numpy(), rtol=1e-15)
    assert vol.proxy_kind == "squared_return"


# ---------------------------------------------------------------- liquidity


def test_liquidity_constant_dollar_volume():
    close = wide([100.0] * 10)
    volume = close * 0 + 1e6
    panel = frames_to_panel(close, volume=volume)
    measure = ingest.liquidity_measure(panel)
    assert measure["AAA"] == pytest.approx(1e-8, rel=1e-12)


def test_liquidity_median_split_two_stocks():
    close = wide([[100.0, 100.0]] * 10, tickers=("AAA", "BBB"))
    volume = close.copy()
    volume["AAA"] = 1e6
    volume["BBB"] = 1e4
    panel = frames_to_panel(close, volume=volume)
    halves = ingest.liquidity_halves(ingest.liquidity_measure(panel))
    assert halves["AAA"] != halves["BBB"]


def test_liquidity_halves_sort_oracle():
    rng = np.random.default_rng(5)
    tickers = [f"S{i}" for i in range(10)]
    close = wide(np.full((30, 10), 50.0), tickers=tickers)
    volume = close.copy()
    scale = rng.uniform(1e4, 1e7, size=10)
    for t, s in zip(tickers, scale):
        volume[t] = s
    panel = frames_to_panel(close, volume=volume)
    measure = ingest.liquidity_measure(panel)
    halves = ingest.liquidity_halves(measure)
    order = measure.sort_values().index
    low_half = set(order[:5])  # most liquid -> smallest inverse dollar volume
    for t in tickers:
        assert (halves[t] == "liquid") == (t in low_half)


def test_liquidity_zero_volume_skipped():
    close = wide([100.0] * 4)
    volume = close.copy()
    volume.iloc[:, 0] = [0.0, 1e6, 0.0, 1e6]
    panel = frames_to_panel(close, volume=volume)
    assert ingest.liquidity_measure(panel)["AAA"] == pytest.approx(1e-8)
    volume.iloc[:, 0] = 0.0
    panel = frames_to_panel(close, volume=volume)
    assert ingest.liquidity_measure(panel).isna().all()
