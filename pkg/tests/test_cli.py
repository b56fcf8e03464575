"""End-to-end checks of the configuration-driven pipeline.

A module-scoped fixture runs `volpers all` once on a small synthetic
config; individual tests inspect the artifacts, the manifest, rerun
determinism, and the error exit codes.
"""

import json
import shutil
from datetime import datetime

import pandas as pd
import pytest

from volpers import cli, features, ingest, ladder, memest
from volpers import portfolio as portfolio_mod
from volpers.memest import MEMORY_PANEL_COLUMNS
from volpers.portfolio import REPORT_COLUMNS

MODELS = ["A", "C", "D_lasso"]
HORIZONS = [1, 5]

# n_days must leave >= 1000 returns for the figarch stage
CONFIG_TEMPLATE = """\
[simulate]
n_stocks = 6
n_days = 1100
seed = 777

[figarch]
truncation = 250

[ladder]
models = A,C,D_lasso
horizons = 1,5

[output]
dir = {out}
"""

EXPECTED_FILES = [
    "prices.csv", "market.csv", "sectors.csv",
    "memory.csv", "figarch.csv", "features.csv",
    "forecasts/A_h1.csv", "forecasts/A_h5.csv",
    "forecasts/C_h1.csv", "forecasts/C_h5.csv",
    "forecasts/D_lasso_h1.csv", "forecasts/D_lasso_h5.csv",
    "eval_model_ladder.csv", "eval_importance.csv",
    "eval_splits_vix.csv", "eval_splits_crisis.csv",
    "eval_splits_sector.csv", "eval_splits_liquidity.csv",
    "eval_cumulative.csv", "eval_report.json",
    "portfolio.csv",
    "report_dbar_vix.csv", "report_sector_heatmap.csv",
    "report_cumulative.svg", "report_dbar_vix.svg",
    "report_sector_heatmap.svg",
    "manifest.json",
]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    out = root / "out"
    cfg_path = root / "run.ini"
    cfg_path.write_text(CONFIG_TEMPLATE.format(out=out))
    rc = cli.main(["all", "--config", str(cfg_path)])
    assert rc == 0
    return cfg_path, out


def first_line(path):
    with open(path) as handle:
        return handle.readline().rstrip("\n")


def test_all_stages_produce_artifacts(pipeline):
    _, out = pipeline
    for name in EXPECTED_FILES:
        path = out / name
        assert path.exists(), name
        assert path.stat().st_size > 0, name


def test_artifact_headers(pipeline):
    _, out = pipeline
    assert first_line(out / "memory.csv") == ",".join(MEMORY_PANEL_COLUMNS)
    assert first_line(out / "forecasts" / "A_h5.csv") == \
        "date,ticker,y_true,y_pred"
    assert first_line(out / "figarch.csv") == \
        "ticker,omega,d,phi,beta,aic,bic,converged"
    assert first_line(out / "portfolio.csv") == ",".join(REPORT_COLUMNS)


def test_artifacts_load_through_library(pipeline):
    _, out = pipeline
    panel = ingest.load_market_panel(out / "prices.csv", out / "market.csv",
                                     out / "sectors.csv")
    assert len(panel.close.columns) == 6

    mem = memest.load_memory_panel(out / "memory.csv", stride=5,
                                   bandwidth_exponent=0.65)
    assert mem.window == 750
    assert set(mem.frame["ticker"]) == set(panel.close.columns)

    feat = features.load_feature_panel(out / "features.csv")
    assert set(features.PREDICTORS) <= set(feat.frame.columns)

    fs = ladder.load_forecast_set(out / "forecasts" / "C_h5.csv", "C", 5)
    assert len(fs.frame) > 0
    assert fs.frame["y_pred"].notna().all()

    report = portfolio_mod.load_portfolio_report(out / "portfolio.csv")
    portfolios = set(report["portfolio"])
    assert "unmanaged" in portfolios
    assert set(MODELS) <= portfolios

    fig = pd.read_csv(out / "figarch.csv")
    assert fig.shape == (6, 8)
    assert fig["converged"].dtype == bool
    ok = fig[fig["converged"]]
    assert len(ok) > 0
    assert ok["omega"].gt(0).all()
    assert ok["d"].between(0.0, 1.0).all()


def test_eval_tables(pipeline):
    _, out = pipeline
    table = pd.read_csv(out / "eval_model_ladder.csv")
    assert len(table) == len(MODELS) * len(HORIZONS)
    assert set(table["model"]) == set(MODELS)
    assert set(table["horizon"]) == set(HORIZONS)
    bench = table[table["model"] == "A"]
    assert bench["dm"].isna().all()
    rest = table[table["model"] != "A"]
    assert rest["dm"].notna().all()
    assert rest["p_value"].between(0.0, 1.0).all()

    imp = pd.read_csv(out / "eval_importance.csv")
    assert set(imp["horizon"]) == set(HORIZONS)
    per_h = imp.groupby("horizon")["feature"].apply(list)
    for h in HORIZONS:
        assert per_h[h] == list(features.PREDICTORS)

    report = json.loads((out / "eval_report.json").read_text())
    assert report["benchmark"] == "A"
    assert len(report["tables"]["model_ladder"]) == len(table)
    assert set(report["importance_lambda"]) == {"1", "5"}


def test_manifest_structure(pipeline):
    cfg_path, out = pipeline
    manifest = json.loads((out / "manifest.json").read_text())

    cfg = cli.load_config(str(cfg_path))
    assert manifest["config"] == cfg
    assert manifest["config_sha256"] == cli.config_hash(cfg)
    assert manifest["config"]["simulate"]["n_stocks"] == 6
    assert manifest["config"]["ladder"]["models"] == "A,C,D_lasso"

    stages = manifest["stages"]
    expected = [s for s in cli.STAGES if s != "all"]
    assert sorted(stages) == sorted(expected)
    for name in expected:
        entry = stages[name]
        assert entry["version"] == cli.STAGE_VERSIONS[name]
        assert len(entry["artifacts"]) > 0
        datetime.fromisoformat(entry["completed_utc"])
    assert "forecasts/A_h1.csv" in stages["forecast"]["artifacts"]
    assert stages["portfolio"]["artifacts"] == ["portfolio.csv"]


def test_estimate_rerun_is_byte_identical(pipeline):
    cfg_path, out = pipeline
    before = (out / "memory.csv").read_bytes()
    rc = cli.main(["estimate", "--config", str(cfg_path)])
    assert rc == 0
    assert (out / "memory.csv").read_bytes() == before


def test_missing_upstream_artifact_exits_3(pipeline, tmp_path, capsys):
    cfg_path, _ = pipeline
    rc = cli.main(["estimate", "--config", str(cfg_path),
                   "--out", str(tmp_path / "empty")])
    assert rc == 3
    err = capsys.readouterr().err
    assert "simulate" in err


def test_missing_forecasts_name_producer_stage(pipeline, tmp_path, capsys):
    cfg_path, out = pipeline
    partial = tmp_path / "partial"
    partial.mkdir()
    for name in ("prices.csv", "market.csv", "sectors.csv", "memory.csv",
                 "features.csv"):
        shutil.copy(out / name, partial / name)
    rc = cli.main(["evaluate", "--config", str(cfg_path),
                   "--out", str(partial)])
    assert rc == 3
    err = capsys.readouterr().err
    assert "forecast" in err


def test_unknown_config_key_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[rolling]\nwindw = 500\n")
    rc = cli.main(["simulate", "--config", str(bad),
                   "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "windw" in capsys.readouterr().err


def test_unknown_config_section_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[turbo]\nenabled = yes\n")
    rc = cli.main(["simulate", "--config", str(bad),
                   "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "turbo" in capsys.readouterr().err


def test_bad_config_value_type_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[simulate]\nn_days = plenty\n")
    rc = cli.main(["simulate", "--config", str(bad),
                   "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "n_days" in capsys.readouterr().err


def test_unknown_model_id_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[ladder]\nmodels = A,ZZZ\n")
    rc = cli.main(["evaluate", "--config", str(bad),
                   "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "ZZZ" in capsys.readouterr().err


def test_nonpositive_horizon_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[ladder]\nhorizons = 0,5\n")
    rc = cli.main(["evaluate", "--config", str(bad),
                   "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "horizons" in capsys.readouterr().err


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert "volpers" in capsys.readouterr().out
