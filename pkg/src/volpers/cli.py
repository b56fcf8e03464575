"""Configuration-driven batch pipeline.

Stages: simulate -> estimate / figarch -> features -> forecast ->
evaluate / portfolio -> report. Each stage reads the artifacts of earlier
stages from the output directory (or user-supplied input CSVs), writes its
own artifacts there, and records itself in manifest.json together with the
fully resolved configuration and its hash. All outputs are deterministic
given the config; timestamps appear only in the manifest.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 estimation
error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, evaluation, features, ingest, ladder, memest
from . import portfolio as portfolio_mod
from . import synth
from .condvol import fit_figarch
from .errors import ConfigError, DataError, VolpersError

log = logging.getLogger(__name__)

STAGES = ["simulate", "estimate", "figarch", "features", "forecast",
          "evaluate", "portfolio", "report", "all"]
STAGE_VERSIONS = {
    "simulate": 1, "estimate": 1, "figarch": 1, "features": 1,
    "forecast": 1, "evaluate": 1, "portfolio": 1, "report": 1,
}

DEFAULTS = {
    "data": {
        "prices": "",
        "market": "",
        "sectors": "",
        "min_coverage": 0.70,
        "proxy": "parkinson",
        "winsor_lo": 0.001,
        "winsor_hi": 0.999,
    },
    "simulate": {
        "kind": "coupled",
        "n_stocks": 20,
        "n_days": 2500,
        "seed": 20240601,
        "start": "2012-01-02",
    },
    "rolling": {
        "window": 750,
        "stride": 5,
        "bandwidth_exponent": 0.65,
    },
    "figarch": {
        "scale": 100.0,
        "truncation": 1000,
    },
    "features": {
        "k_dynamics": 12,
        "tau": 0.30,
    },
    "ladder": {
        "models": "A,A1,A2,A3,A4,A5,C,D_lasso,D_ridge,D_en,D_rf,D_gbm",
        "horizons": "1,5,22",
        "warmup_frac": 0.4,
        "d_refit_stride": 20,
        "cv_splits": 5,
        "seed": 0,
    },
    "evaluate": {
        "benchmark": "A",
        "split_horizon": 5,
    },
    "portfolio": {
        "gamma": 5.0,
        "models": "",
    },
    "output": {
        "dir": "out",
        "threads": 1,
    },
}


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    """Resolve the layered INI config against the package defaults.

    Unknown sections or keys are configuration errors; values are coerced
    to the type of the corresponding default. `overrides` maps
    (section, key) -> value for command-line flags.
    """
    cfg = {section: dict(values) for section, values in DEFAULTS.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in cfg:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in cfg[section]:
                    raise ConfigError(
                        f"unknown config key '{key}' in section [{section}]")
                cfg[section][key] = _coerce(raw, DEFAULTS[section][key],
                                            section, key)
    for (section, key), value in (overrides or {}).items():
        cfg[section][key] = value
    return cfg


def _coerce(raw: str, default, section: str, key: str):
    kind = type(default)
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(
            f"config value [{section}] {key} = {raw!r} is not a valid "
            f"{kind.__name__}") from exc


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def _jsonable(obj):
    """Recursively replace non-finite floats with None for strict JSON."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _models_list(cfg: dict) -> list:
    models = [m.strip() for m in cfg["ladder"]["models"].split(",") if m.strip()]
    unknown = [m for m in models if m not in ladder.MODEL_COLUMNS]
    if unknown:
        raise ConfigError(f"unknown model ids in config: {unknown}")
    if not models:
        raise ConfigError("config selects no models")
    return models


def _horizons_list(cfg: dict) -> list:
    try:
        horizons = [int(h) for h in cfg["ladder"]["horizons"].split(",") if h.strip()]
    except ValueError as exc:
        raise ConfigError("horizons must be a comma list of integers") from exc
    if not horizons or any(h < 1 for h in horizons):
        raise ConfigError(f"horizons must be positive, got {horizons}")
    return horizons


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise DataError(
            f"missing artifact {path}; run the '{producer}' stage first")
    return path


def _input_paths(cfg: dict, out: Path):
    data = cfg["data"]
    if data["prices"]:
        for key in ("market", "sectors"):
            if not data[key]:
                raise ConfigError(
                    f"[data] prices is set but {key} is not; supply all three")
        return Path(data["prices"]), Path(data["market"]), Path(data["sectors"])
    return (_require(out / "prices.csv", "simulate"),
            _require(out / "market.csv", "simulate"),
            _require(out / "sectors.csv", "simulate"))


def _load_panel(cfg: dict, out: Path) -> ingest.MarketPanel:
    prices, market, sectors = _input_paths(cfg, out)
    return ingest.load_market_panel(prices, market, sectors,
                                    min_coverage=cfg["data"]["min_coverage"])


def _vol_panel(cfg: dict, panel: ingest.MarketPanel,
               returns: ingest.ReturnPanel) -> ingest.VolPanel:
    proxy = cfg["data"]["proxy"]
    if proxy == "parkinson":
        return ingest.parkinson_rv(panel)
    if proxy == "squared_return":
        return ingest.squared_return_vol(returns)
    raise ConfigError(f"unknown variance proxy {proxy!r}")


def _returns(cfg: dict, panel: ingest.MarketPanel) -> ingest.ReturnPanel:
    return ingest.to_log_returns(panel, lo_pct=cfg["data"]["winsor_lo"],
                                 hi_pct=cfg["data"]["winsor_hi"])


def stage_simulate(cfg: dict, out: Path) -> list:
    sim = cfg["simulate"]
    panel = synth.demo_market_panel(kind=sim["kind"], n_stocks=sim["n_stocks"],
                                    n_days=sim["n_days"], seed=sim["seed"],
                                    start=sim["start"])
    paths = [out / "prices.csv", out / "market.csv", out / "sectors.csv"]
    ingest.save_market_panel(panel, *paths)
    return paths


def stage_estimate(cfg: dict, out: Path) -> list:
    panel = _load_panel(cfg, out)
    vol = _vol_panel(cfg, panel, _returns(cfg, panel))
    roll = cfg["rolling"]
    mem = memest.rolling_memory(
        vol, window=roll["window"], stride=roll["stride"],
        bandwidth_exponent=roll["bandwidth_exponent"])
    path = out / "memory.csv"
    memest.save_memory_panel(mem, path)
    return [path]


def stage_figarch(cfg: dict, out: Path) -> list:
    panel = _load_panel(cfg, out)
    returns = _returns(cfg, panel)
    scale = cfg["figarch"]["scale"]
    truncation = cfg["figarch"]["truncation"]
    rows = []
    for ticker in returns.r.columns:
        r = returns.r[ticker].dropna().to_numpy() * scale
        try:
            fit = fit_figarch(r, truncation=truncation)
            rows.append({"ticker": ticker, "omega": fit.omega, "d": fit.d,
                         "phi": fit.phi, "beta": fit.beta, "aic": fit.aic,
                         "bic": fit.bic, "converged": fit.converged})
        except VolpersError as exc:
            log.warning("figarch fit failed for %s: %s", ticker, exc)
            rows.append({"ticker": ticker, "omega": np.nan, "d": np.nan,
                         "phi": np.nan, "beta": np.nan, "aic": np.nan,
                         "bic": np.nan, "converged": False})
    frame = pd.DataFrame(rows, columns=["ticker", "omega", "d", "phi", "beta",
                                        "aic", "bic", "converged"])
    path = out / "figarch.csv"
    frame.to_csv(path, index=False)
    return [path]


def stage_features(cfg: dict, out: Path) -> list:
    panel = _load_panel(cfg, out)
    returns = _returns(cfg, panel)
    vol = _vol_panel(cfg, panel, returns)
    roll = cfg["rolling"]
    mem = memest.load_memory_panel(
        _require(out / "memory.csv", "estimate"),
        stride=roll["stride"], bandwidth_exponent=roll["bandwidth_exponent"])
    feat = features.assemble_features(
        vol, returns, mem, panel.sectors, panel.market,
        liquidity=ingest.liquidity_measure(panel),
        k_dynamics=cfg["features"]["k_dynamics"], tau=cfg["features"]["tau"])
    path = out / "features.csv"
    features.save_feature_panel(feat, path)
    return [path]


def _load_features(cfg: dict, out: Path) -> features.FeaturePanel:
    return features.load_feature_panel(
        _require(out / "features.csv", "features"),
        k_dynamics=cfg["features"]["k_dynamics"], tau=cfg["features"]["tau"])


def stage_forecast(cfg: dict, out: Path) -> list:
    feat = _load_features(cfg, out)
    lad = cfg["ladder"]
    forecast_dir = out / "forecasts"
    forecast_dir.mkdir(parents=True, exist_ok=True)
    n_jobs = max(1, int(cfg["output"]["threads"]))
    paths = []
    for model_id in _models_list(cfg):
        spec = ladder.model_spec(model_id, d_refit_stride=lad["d_refit_stride"],
                                 tree_params={"n_jobs": n_jobs}
                                 if model_id == "D_rf" else None)
        for h in _horizons_list(cfg):
            fs = ladder.walk_forward(feat, spec, h,
                                     warmup_frac=lad["warmup_frac"],
                                     d_refit_stride=lad["d_refit_stride"],
                                     seed=lad["seed"],
                                     n_splits=lad["cv_splits"])
            path = forecast_dir / f"{model_id}_h{h}.csv"
            ladder.save_forecast_set(fs, path)
            paths.append(path)
            log.info("forecast %s h=%d: %d rows", model_id, h, len(fs.frame))
    return paths


def _load_forecast(out: Path, model_id: str, horizon: int) -> ladder.ForecastSet:
    path = _require(out / "forecasts" / f"{model_id}_h{horizon}.csv",
                    "forecast")
    return ladder.load_forecast_set(path, model_id, horizon)


def stage_evaluate(cfg: dict, out: Path) -> list:
    models = _models_list(cfg)
    horizons = _horizons_list(cfg)
    benchmark = cfg["evaluate"]["benchmark"]
    if benchmark not in models:
        raise ConfigError(
            f"benchmark {benchmark!r} is not among the configured models")
    panel = _load_panel(cfg, out)
    feat = _load_features(cfg, out)

    ladder_rows = []
    losses_by_h: dict = {}
    for h in horizons:
        losses = {}
        for model_id in models:
            fs = _load_forecast(out, model_id, h)
            losses[model_id] = evaluation.compute_losses(fs, "mse_log")
        losses_by_h[h] = losses
        bench = losses[benchmark]
        for model_id in models:
            fs_loss = losses[model_id]
            qlike = evaluation.compute_losses(
                _load_forecast(out, model_id, h), "qlike")
            row = {"model": model_id, "horizon": h,
                   "mse": fs_loss.pooled(), "qlike": qlike.pooled(),
                   "pct_improvement": np.nan, "dm": np.nan,
                   "p_value": np.nan}
            if model_id != benchmark:
                a, b = evaluation.align_losses(bench, fs_loss)
                dm = evaluation.dm_hln(a, b, h)
                row["pct_improvement"] = 100.0 * (a.pooled() - b.pooled()) \
                    / a.pooled()
                row["dm"] = dm.statistic
                row["p_value"] = dm.p_value
            ladder_rows.append(row)
    ladder_table = pd.DataFrame(ladder_rows)
    paths = [out / "eval_model_ladder.csv"]
    ladder_table.to_csv(paths[0], index=False)

    importance_rows = []
    lambdas = {}
    for h in horizons:
        imp = evaluation.pooled_importance(feat, h,
                                           n_splits=cfg["ladder"]["cv_splits"])
        lambdas[str(h)] = imp.attrs["lambda"]
        for _, r in imp.iterrows():
            importance_rows.append({"horizon": h, "feature": r["feature"],
                                    "coefficient": r["coefficient"]})
    importance = pd.DataFrame(importance_rows)
    paths.append(out / "eval_importance.csv")
    importance.to_csv(paths[-1], index=False)

    split_h = cfg["evaluate"]["split_horizon"]
    if split_h not in losses_by_h:
        raise ConfigError(
            f"split_horizon {split_h} is not among the configured horizons")
    losses = losses_by_h[split_h]
    liquidity = ingest.liquidity_halves(ingest.liquidity_measure(panel))
    split_specs = {
        "vix": ("vix_quartile", {"market": panel.market}),
        "crisis": ("crisis_window", {}),
        "sector": ("sector", {"sectors": panel.sectors}),
        "liquidity": ("liquidity_half", {"liquidity_groups": liquidity}),
    }
    splits_json = {}
    for name, (grouping, kwargs) in split_specs.items():
        table = evaluation.split_report(losses, benchmark, grouping, **kwargs)
        path = out / f"eval_splits_{name}.csv"
        table.to_csv(path, index=False)
        paths.append(path)
        splits_json[name] = table.to_dict(orient="records")

    cum_rows = []
    for model_id in models:
        if model_id == benchmark:
            continue
        a, b = evaluation.align_losses(losses[benchmark], losses[model_id])
        cum = evaluation.cumulative_loss_differential(a, b)
        for _, r in cum.iterrows():
            cum_rows.append({"date": r["date"].strftime("%Y-%m-%d"),
                             "model": model_id,
                             "differential": r["differential"],
                             "cumulative": r["cumulative"]})
    cumulative = pd.DataFrame(cum_rows,
                              columns=["date", "model", "differential",
                                       "cumulative"])
    paths.append(out / "eval_cumulative.csv")
    cumulative.to_csv(paths[-1], index=False)

    report = {
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "seed": cfg["ladder"]["seed"],
        "benchmark": benchmark,
        "loss_convention": "mse on log variance; qlike = y_hat + exp(y - y_hat)",
        "importance_lambda": lambdas,
        "tables": {
            "model_ladder": ladder_table.to_dict(orient="records"),
            "importance": importance.to_dict(orient="records"),
            "splits": splits_json,
            "cumulative": cumulative.to_dict(orient="records"),
        },
    }
    paths.append(out / "eval_report.json")
    paths[-1].write_text(json.dumps(_jsonable(report), indent=2,
                                    sort_keys=True, allow_nan=False))
    return paths


def stage_portfolio(cfg: dict, out: Path) -> list:
    panel = _load_panel(cfg, out)
    returns = _returns(cfg, panel)
    raw = cfg["portfolio"]["models"].strip()
    models = [m.strip() for m in raw.split(",") if m.strip()] if raw \
        else _models_list(cfg)
    forecast_sets = {m: _load_forecast(out, m, 5) for m in models}
    report = portfolio_mod.portfolio_report(forecast_sets, returns.r,
                                            panel.market,
                                            gamma=cfg["portfolio"]["gamma"])
    path = out / "portfolio.csv"
    portfolio_mod.save_portfolio_report(report, path)
    return [path]


def stage_report(cfg: dict, out: Path) -> list:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "volpers"

    roll = cfg["rolling"]
    mem = memest.load_memory_panel(
        _require(out / "memory.csv", "estimate"),
        stride=roll["stride"], bandwidth_exponent=roll["bandwidth_exponent"])
    panel = _load_panel(cfg, out)
    cum_path = _require(out / "eval_cumulative.csv", "evaluate")
    cumulative = pd.read_csv(cum_path, parse_dates=["date"],
                             float_precision="round_trip")

    dbar = mem.frame.groupby("date")["d_gph"].mean()
    vix = panel.market["VIX"].reindex(dbar.index)
    dbar_table = pd.DataFrame({"date": dbar.index.strftime("%Y-%m-%d"),
                               "mean_d": dbar.to_numpy(),
                               "vix": vix.to_numpy()})
    paths = [out / "report_dbar_vix.csv"]
    dbar_table.to_csv(paths[0], index=False)

    sector_of = panel.sectors
    frame = mem.frame.copy()
    frame["sector"] = frame["ticker"].map(sector_of)
    heat = (frame.groupby(["date", "sector"])["d_gph"].mean()
            .reset_index().rename(columns={"d_gph": "mean_d"}))
    heat["date"] = heat["date"].dt.strftime("%Y-%m-%d")
    paths.append(out / "report_sector_heatmap.csv")
    heat.to_csv(paths[-1], index=False)

    def _save(fig, name):
        path = out / name
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(path)

    fig, ax = plt.subplots(figsize=(8, 4.5))
    for model_id, chunk in cumulative.groupby("model"):
        ax.plot(chunk["date"], chunk["cumulative"], label=model_id, lw=1.0)
    ax.axhline(0.0, color="black", lw=0.5)
    ax.set_xlabel("date")
    ax.set_ylabel("cumulative loss differential vs benchmark")
    ax.legend(fontsize=7, ncol=2)
    fig.autofmt_xdate()
    _save(fig, "report_cumulative.svg")

    fig, ax = plt.subplots(figsize=(8, 4.5))
    dates = pd.DatetimeIndex(dbar.index)
    ax.plot(dates, dbar.to_numpy(), color="tab:blue", lw=1.0,
            label="cross-sectional mean d")
    ax2 = ax.twinx()
    ax2.plot(dates, vix.to_numpy(), color="tab:red", lw=0.8, alpha=0.7,
             label="VIX")
    ax.set_xlabel("date")
    ax.set_ylabel("mean d (GPH)")
    ax2.set_ylabel("VIX")
    fig.autofmt_xdate()
    _save(fig, "report_dbar_vix.svg")

    pivot = (frame.groupby(["date", "sector"])["d_gph"].mean()
             .unstack("sector").sort_index())
    fig, ax = plt.subplots(figsize=(8, 4.5))
    img = ax.imshow(pivot.to_numpy().T, aspect="auto", cmap="viridis",
                    interpolation="nearest")
    ax.set_yticks(range(len(pivot.columns)), labels=list(pivot.columns),
                  fontsize=7)
    step = max(1, len(pivot.index) // 8)
    ticks = range(0, len(pivot.index), step)
    ax.set_xticks(list(ticks),
                  labels=[pivot.index[i].strftime("%Y-%m") for i in ticks],
                  fontsize=7)
    fig.colorbar(img, ax=ax, label="sector mean d")
    _save(fig, "report_sector_heatmap.svg")
    return paths


STAGE_FUNCS = {
    "simulate": stage_simulate,
    "estimate": stage_estimate,
    "figarch": stage_figarch,
    "features": stage_features,
    "forecast": stage_forecast,
    "evaluate": stage_evaluate,
    "portfolio": stage_portfolio,
    "report": stage_report,
}


def _update_manifest(out: Path, cfg: dict, stage: str, artifacts: list) -> None:
    path = out / "manifest.json"
    manifest = {}
    if path.exists():
        manifest = json.loads(path.read_text())
    manifest["config"] = cfg
    manifest["config_sha256"] = config_hash(cfg)
    manifest["package_version"] = __version__
    stages = manifest.setdefault("stages", {})
    stages[stage] = {
        "version": STAGE_VERSIONS[stage],
        "artifacts": [p.name if p.parent == out
                      else str(p.relative_to(out)) for p in artifacts],
        "completed_utc": datetime.now(timezone.utc).isoformat(),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))


def run_stage(stage: str, cfg: dict) -> None:
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    stages = [s for s in STAGES if s != "all"] if stage == "all" else [stage]
    for name in stages:
        log.info("running stage %s", name)
        try:
            artifacts = STAGE_FUNCS[name](cfg, out)
        except VolpersError as exc:
            raise type(exc)(f"stage {name}: {exc}") from exc
        _update_manifest(out, cfg, name, artifacts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="volpers",
        description="Volatility persistence pipeline: simulation, rolling "
                    "memory estimation, forecasting ladder, evaluation, and "
                    "managed portfolios.")
    parser.add_argument("--version", action="version",
                        version=f"volpers {__version__}")
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        p.add_argument("--config", default=None, metavar="PATH",
                       help="INI config file; defaults apply when omitted")
        p.add_argument("--out", default=None, metavar="DIR",
                       help="output directory (overrides [output] dir)")
        p.add_argument("--threads", type=int, default=None, metavar="N",
                       help="intra-stage parallelism (results unchanged)")
        p.add_argument("--seed", type=int, default=None, metavar="N",
                       help="override simulate and ladder seeds")
        if stage in ("forecast", "all"):
            p.add_argument("--models", default=None,
                           help="comma list of model ids")
            p.add_argument("--horizons", default=None,
                           help="comma list of horizons")
            p.add_argument("--warmup-frac", type=float, default=None)
            p.add_argument("--d-refit-stride", type=int, default=None)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {}
    if args.out is not None:
        overrides[("output", "dir")] = args.out
    if args.threads is not None:
        overrides[("output", "threads")] = args.threads
    if args.seed is not None:
        overrides[("simulate", "seed")] = args.seed
        overrides[("ladder", "seed")] = args.seed
    if getattr(args, "models", None) is not None:
        overrides[("ladder", "models")] = args.models
    if getattr(args, "horizons", None) is not None:
        overrides[("ladder", "horizons")] = args.horizons
    if getattr(args, "warmup_frac", None) is not None:
        overrides[("ladder", "warmup_frac")] = args.warmup_frac
    if getattr(args, "d_refit_stride", None) is not None:
        overrides[("ladder", "d_refit_stride")] = args.d_refit_stride
    try:
        cfg = load_config(args.config, overrides)
        run_stage(args.stage, cfg)
    except VolpersError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
