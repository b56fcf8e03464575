"""Model ladder, regression estimators, and walk-forward forecasting.

The ladder runs from the HAR core (A) through augmented linear variants
(A1..A5, C) to penalized and tree-based learners (D_*). Linear models are
refit at every evaluation step through incremental cross-product updates;
penalized and tree models refit every `d_refit_stride` steps with
hyperparameters chosen by forward-chaining time-series cross-validation.
No fit ever sees a row whose target window extends past the forecast date.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.linalg import qr
from sklearn.ensemble import (HistGradientBoostingRegressor,
                              RandomForestRegressor)

from .errors import ConfigError, DataError, EstimationError
from .features import PREDICTORS, FeaturePanel

log = logging.getLogger(__name__)

_HAR_CORE = ["har_d_log", "har_w_log", "har_m_log", "ret_lag1", "ret_lag1_abs"]

MODEL_COLUMNS = {
    "A": list(_HAR_CORE),
    "A1": _HAR_CORE + ["vix", "move"],
    "A2": _HAR_CORE + ["d_gph", "delta_d_gph", "vol_d_gph", "trend_d_gph",
                       "h", "delta_h"],
    "A3": _HAR_CORE + ["cs_mean_d", "cs_std_d"],
    "A4": _HAR_CORE + ["sector_mean_d"],
    "A5": _HAR_CORE + ["d_gph", "vix", "move", "d_x_vix", "d_x_move"],
    "C": list(PREDICTORS),
}
for _d_id in ("D_lasso", "D_ridge", "D_en", "D_rf", "D_gbm"):
    MODEL_COLUMNS[_d_id] = list(PREDICTORS)

MODEL_IDS = ["A", "A1", "A2", "A3", "A4", "A5", "C",
             "D_lasso", "D_ridge", "D_en", "D_rf", "D_gbm"]

_ESTIMATOR_OF = {
    "A": "ols", "A1": "ols", "A2": "ols", "A3": "ols", "A4": "ols",
    "A5": "ols", "C": "ols",
    "D_lasso": "lasso", "D_ridge": "ridge", "D_en": "elastic_net",
    "D_rf": "random_forest", "D_gbm": "gradient_boosting",
}

DEFAULT_TREE_PARAMS = {
    "random_forest": {"n_estimators": 300, "max_features": "third",
                      "max_depth": 6, "min_samples_leaf": 20},
    "gradient_boosting": {"n_estimators": 200, "learning_rate": 0.05,
                          "max_depth": 6, "min_samples_leaf": 20},
}

DEFAULT_LAMBDA_GRID = np.logspace(-4.0, 1.0, 50)
ELASTIC_NET_ALPHA = 0.5
CD_TOL = 1e-7
CD_MAX_SWEEPS = 100_000


@dataclass(frozen=True)
class ModelSpec:
    id: str
    columns: list
    estimator: str
    params: dict = field(default_factory=dict)
    refit_stride: int = 1


def model_spec(model_id: str, d_refit_stride: int = 20,
               tree_params: dict | None = None) -> ModelSpec:
    if model_id not in MODEL_COLUMNS:
        raise ConfigError(f"unknown model id {model_id!r}")
    estimator = _ESTIMATOR_OF[model_id]
    params: dict = {}
    if estimator in DEFAULT_TREE_PARAMS:
        params = dict(DEFAULT_TREE_PARAMS[estimator])
        if tree_params:
            params.update(tree_params)
    refit = 1 if estimator == "ols" else d_refit_stride
    return ModelSpec(id=model_id, columns=list(MODEL_COLUMNS[model_id]),
                     estimator=estimator, params=params, refit_stride=refit)


def default_ladder(d_refit_stride: int = 20) -> list:
    return [model_spec(m, d_refit_stride) for m in MODEL_IDS]


@dataclass
class FitResult:
    """Fitted coefficients plus whatever is needed to predict on raw columns."""

    columns: list
    coef: np.ndarray
    intercept: float
    mean: np.ndarray | None = None
    sd: np.ndarray | None = None
    dropped: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    model: object = None

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.model is not None:
            return self.model.predict(X)
        if self.mean is not None:
            X = (X - self.mean) / self.sd
        return self.intercept + X @ self.coef


def fit_ols(X, y, columns: list | None = None) -> FitResult:
    """Least squares with an unpenalized intercept.

    Solved on centered data through a pivoted orthogonal decomposition;
    linearly dependent columns (including constants, which the centering
    zeroes out) are dropped, recorded, and given zero coefficients.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if columns is None:
        columns = [f"x{j}" for j in range(p)]
    if n < p + 1:
        raise EstimationError(f"need at least {p + 1} rows, got {n}")
    xbar = X.mean(axis=0)
    ybar = float(y.mean())
    Xc = X - xbar
    yc = y - ybar

    _, R, piv = qr(Xc, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(n, p) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int((diag > tol).sum())
    kept = np.sort(piv[:rank])
    dropped = [columns[j] for j in sorted(piv[rank:])]

    coef = np.zeros(p)
    if rank:
        sol, *_ = np.linalg.lstsq(Xc[:, kept], yc, rcond=None)
        coef[kept] = sol
    intercept = ybar - float(xbar @ coef)
    return FitResult(columns=list(columns), coef=coef, intercept=intercept,
                     dropped=dropped, diagnostics={"rank": rank, "n": n})


def standardize_columns(X: np.ndarray):
    """Training-sample standardization; zero-spread columns are dropped.

    Returns (Xs, mean, sd, kept_idx, dropped_idx). sd uses the population
    convention so standardized columns have unit second moment exactly.
    """
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    scale = np.maximum(np.abs(mean), 1.0)
    kept = np.flatnonzero(sd > 1e-12 * scale)
    dropped = np.flatnonzero(~(sd > 1e-12 * scale))
    Xs = (X[:, kept] - mean[kept]) / sd[kept]
    return Xs, mean[kept], sd[kept], kept, dropped


def _soft_threshold(value: float, cut: float) -> float:
    if value > cut:
        return value - cut
    if value < -cut:
        return value + cut
    return 0.0


def _coordinate_descent(G: np.ndarray, c: np.ndarray, lam: float, alpha: float,
                        beta0: np.ndarray, tol: float = CD_TOL,
                        max_sweeps: int = CD_MAX_SWEEPS, strict: bool = True):
    """Cyclic coordinate descent on (1/2n)||y - Xb||^2 + lam*(alpha*l1 + (1-alpha)/2*l2).

    Runs on the cross-product form: G = X'X/n, c = X'y/n, so each sweep is
    O(p^2) regardless of sample size. Converges when the largest coefficient
    change in a sweep drops below `tol`. With strict=False the current
    iterate is returned at the sweep cap instead of raising (used only for
    cross-validation candidates, where near-singular folds at tiny lambda
    can crawl).
    """
    p = c.size
    beta = beta0.copy()
    l1 = lam * alpha
    denom = np.diag(G) + lam * (1.0 - alpha)
    gb = G @ beta
    for sweep in range(max_sweeps):
        delta = 0.0
        for j in range(p):
            bj = beta[j]
            rho = c[j] - gb[j] + G[j, j] * bj
            bn = _soft_threshold(rho, l1)
            if bn != 0.0:
                bn /= denom[j]
            if bn != bj:
                gb += G[:, j] * (bn - bj)
                beta[j] = bn
                step = abs(bn - bj)
                if step > delta:
                    delta = step
        if delta < tol:
            return beta, sweep + 1
    if strict:
        raise EstimationError(
            f"coordinate descent did not converge within {max_sweeps} sweeps")
    return beta, max_sweeps


def select_lambda_cv(X, y, dates, kind: str, alpha: float,
                     n_splits: int = 5, grid=None):
    """Forward-chaining time-series cross-validation over a lambda grid.

    Folds split the unique ordered dates; each fold trains on everything up
    to its boundary and validates on the next block, so validation rows are
    always strictly later than training rows. Ties in validation MSE go to
    the larger (more parsimonious) lambda.
    """
    if grid is None:
        grid = DEFAULT_LAMBDA_GRID
    grid = np.sort(np.asarray(grid, dtype=float))[::-1]
    dates = np.asarray(dates)
    uniq = np.unique(dates)
    if uniq.size < n_splits + 1:
        raise ConfigError(
            f"need more than {n_splits} distinct dates for {n_splits}-fold "
            f"forward-chaining CV, got {uniq.size}")
    edges = [uniq[int(round(len(uniq) * (i + 1) / (n_splits + 1))) - 1]
             for i in range(n_splits + 1)]
    sse = np.zeros(grid.size)
    count = np.zeros(grid.size)
    min_train = X.shape[1] + 2
    for i in range(n_splits):
        train = dates <= edges[i]
        valid = (dates > edges[i]) & (dates <= edges[i + 1])
        if int(train.sum()) < min_train or not valid.any():
            continue
        Xs, mean, sd, kept, _ = standardize_columns(X[train])
        ytr = y[train]
        ybar = float(ytr.mean())
        n = Xs.shape[0]
        G = Xs.T @ Xs / n
        c = Xs.T @ (ytr - ybar) / n
        Xv = (X[valid][:, kept] - mean) / sd
        yv = y[valid]
        beta = np.zeros(c.size)
        for g, lam in enumerate(grid):
            beta, _ = _coordinate_descent(G, c, lam, alpha, beta,
                                          max_sweeps=2000, strict=False)
            resid = yv - ybar - Xv @ beta
            sse[g] += float(resid @ resid)
            count[g] += yv.size
    if not count.any():
        raise EstimationError("cross-validation produced no usable folds")
    mse = sse / np.maximum(count, 1)
    best = int(np.argmin(mse))  # grid is descending: argmin ties pick larger lam
    return float(grid[best]), {"grid": grid, "cv_mse": mse}


def fit_shrinkage(X, y, kind: str, lam: float | None = None,
                  alpha: float | None = None, columns: list | None = None,
                  dates=None, n_splits: int = 5, grid=None,
                  standardize: bool = True) -> FitResult:
    """Lasso / ridge / elastic net by coordinate descent.

    With `standardize=True` the design is standardized on its own rows (the
    training sample) and zero-spread columns are dropped and recorded; pass
    False when the caller has already standardized. When `lam` is None it is
    chosen by forward-chaining CV, which requires per-row `dates`.
    """
    kinds = {"lasso": 1.0, "ridge": 0.0, "elastic_net": ELASTIC_NET_ALPHA}
    if kind not in kinds:
        raise ConfigError(f"unknown shrinkage kind {kind!r}")
    if alpha is None:
        alpha = kinds[kind]
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"mixing weight alpha must be in [0, 1], got {alpha}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if columns is None:
        columns = [f"x{j}" for j in range(p)]

    if lam is None:
        if dates is None:
            raise ConfigError("lambda selection needs per-row dates for CV")
        lam, cv_diag = select_lambda_cv(X, y, dates, kind, alpha,
                                        n_splits=n_splits, grid=grid)
    else:
        cv_diag = {}
    if lam < 0:
        raise ConfigError(f"penalty strength must be >= 0, got {lam}")

    if standardize:
        Xs, mean, sd, kept, dropped_idx = standardize_columns(X)
    else:
        Xs, mean, sd = X, None, None
        kept = np.arange(p)
        dropped_idx = np.array([], dtype=int)
    ybar = float(y.mean())
    yc = y - ybar
    ns = Xs.shape[0]
    G = Xs.T @ Xs / ns
    c = Xs.T @ yc / ns
    beta_kept, sweeps = _coordinate_descent(G, c, lam, alpha,
                                            np.zeros(c.size))
    coef = np.zeros(p)
    coef[kept] = beta_kept
    if standardize:
        full_mean = np.zeros(p)
        full_sd = np.ones(p)
        full_mean[kept] = mean
        full_sd[kept] = sd
        mean, sd = full_mean, full_sd
    diagnostics = {"lambda": lam, "alpha": alpha, "sweeps": sweeps,
                   "n": n, **cv_diag}
    return FitResult(columns=list(columns), coef=coef, intercept=ybar,
                     mean=mean, sd=sd,
                     dropped=[columns[j] for j in dropped_idx],
                     diagnostics=diagnostics)


def shrinkage_kkt_gaps(X, y, fit: FitResult, lam: float, alpha: float):
    """Largest violations of the subgradient conditions at a solution.

    Returns (worst gap over zero coefficients, worst gap over active ones),
    both computed on the same standardized design the fit used.
    """
    X = np.asarray(X, dtype=float)
    if fit.mean is not None:
        X = (X - fit.mean) / fit.sd
        beta = fit.coef.copy()
    else:
        beta = fit.coef
    n = X.shape[0]
    resid = y - fit.intercept - X @ beta
    grad = X.T @ resid / n
    zero = beta == 0.0
    gap_zero = 0.0
    if zero.any():
        gap_zero = float(np.max(np.abs(grad[zero])) - lam * alpha)
    gap_active = 0.0
    if (~zero).any():
        target = lam * alpha * np.sign(beta[~zero]) + lam * (1 - alpha) * beta[~zero]
        gap_active = float(np.max(np.abs(grad[~zero] - target)))
    return gap_zero, gap_active


def fit_tree_ensemble(X, y, kind: str, params: dict | None = None,
                      seed: int = 0, columns: list | None = None) -> FitResult:
    """Random forest or gradient boosting with the package defaults.

    The forest subsamples floor(p/3) features per split ('third'); boosting
    uses binned split finding (histogram trees), which keeps the full
    walk-forward ladder fast on a single core.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] < 50:
        raise EstimationError(f"need >= 50 rows for trees, got {X.shape[0]}")
    if columns is None:
        columns = [f"x{j}" for j in range(X.shape[1])]
    merged = dict(DEFAULT_TREE_PARAMS.get(kind, {}))
    if params:
        merged.update(params)
    n_jobs = int(merged.pop("n_jobs", 1))
    if kind == "random_forest":
        if merged.get("max_features") == "third":
            merged["max_features"] = max(1, X.shape[1] // 3)
        model = RandomForestRegressor(random_state=seed, n_jobs=n_jobs,
                                      **merged)
    elif kind == "gradient_boosting":
        model = HistGradientBoostingRegressor(
            max_iter=merged["n_estimators"],
            learning_rate=merged["learning_rate"],
            max_depth=merged["max_depth"],
            max_leaf_nodes=None,
            min_samples_leaf=merged["min_samples_leaf"],
            early_stopping=False,
            random_state=seed)
    else:
        raise ConfigError(f"unknown tree ensemble kind {kind!r}")
    model.fit(X, y)
    return FitResult(columns=list(columns), coef=np.zeros(X.shape[1]),
                     intercept=0.0, model=model,
                     diagnostics={"kind": kind, "seed": seed, **merged})


@dataclass(frozen=True)
class ForecastSet:
    """Out-of-sample forecasts aligned with realized targets."""

    model_id: str
    horizon: int
    frame: pd.DataFrame
    cutoff: pd.Timestamp
    diagnostics: dict = field(default_factory=dict)


class _GramState:
    """Incremental normal equations over [1, X] for one linear model."""

    __slots__ = ("G", "b", "n", "max_end_day")

    def __init__(self, p: int):
        self.G = np.zeros((p + 1, p + 1))
        self.b = np.zeros(p + 1)
        self.n = 0
        self.max_end_day = -1

    def add(self, x: np.ndarray, y: float, end_day: int):
        z = np.concatenate([[1.0], x])
        self.G += np.outer(z, z)
        self.b += z * y
        self.n += 1
        if end_day > self.max_end_day:
            self.max_end_day = end_day

    def solve(self):
        try:
            return np.linalg.solve(self.G, self.b)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(self.G, self.b, rcond=None)
            return sol


def warmup_cutoff(stride_dates, warmup_frac: float):
    """Nearest-rank percentile date: the first 40% of dates are warm-up."""
    dates = pd.DatetimeIndex(stride_dates).sort_values()
    if not 0 < warmup_frac < 1:
        raise ConfigError(f"warmup_frac must be in (0, 1), got {warmup_frac}")
    k = math.ceil(warmup_frac * len(dates))
    if k < 1 or k >= len(dates):
        raise ConfigError("warm-up fraction leaves no evaluation dates")
    return dates[k - 1]


def _derived_seed(seed: int, model_id: str, horizon: int, refit_index: int) -> int:
    material = [seed, horizon, refit_index] + [ord(ch) for ch in model_id]
    state = np.random.SeedSequence(material).generate_state(1)[0]
    return int(state) % (2 ** 31 - 1)


def walk_forward(features: FeaturePanel, model: ModelSpec, horizon: int,
                 warmup_frac: float = 0.4, d_refit_stride: int = 20,
                 seed: int = 0, n_splits: int = 5, grid=None) -> ForecastSet:
    """Expanding-window out-of-sample forecasts for one (model, horizon).

    Rows enter the training set only once their target window is fully
    realized (row day index + horizon <= forecast day index). Linear models
    refit at every evaluation date via incremental cross products;
    penalized / tree models refit every `d_refit_stride` evaluation steps
    and reuse the last fit in between.
    """
    target = f"y_h{horizon}"
    frame = features.frame
    missing_cols = [c for c in model.columns + [target] if c not in frame.columns]
    if missing_cols:
        raise ConfigError(f"feature panel lacks columns {missing_cols}")

    stride_dates = pd.DatetimeIndex(frame["date"].unique()).sort_values()
    cutoff = warmup_cutoff(stride_dates, warmup_frac)
    eval_dates = stride_dates[stride_dates > cutoff]
    if len(eval_dates) == 0:
        raise ConfigError("no evaluation dates after the warm-up cutoff")

    day_of = dict(frame.groupby("date")["day_index"].first())
    X_all = frame[model.columns].to_numpy(dtype=float)
    y_all = frame[target].to_numpy(dtype=float)
    day_all = frame["day_index"].to_numpy(dtype=int)
    dates_all = frame["date"].to_numpy()
    tickers_all = frame["ticker"].to_numpy()
    complete = np.isfinite(X_all).all(axis=1)
    trainable = complete & np.isfinite(y_all)

    order = np.argsort(day_all, kind="stable")
    n_rows = order.size
    p = len(model.columns)

    rows_by_date = {d: np.flatnonzero(dates_all == np.datetime64(d))
                    for d in eval_dates}

    linear = model.estimator == "ols"
    gram = _GramState(p) if linear else None
    train_idx: list = []
    ptr = 0
    fit: FitResult | None = None
    coef_aug: np.ndarray | None = None
    refits = 0
    n_dropped_target = 0
    n_dropped_incomplete = 0
    audit_rows = []
    out_records = []

    for step, t in enumerate(eval_dates):
        t_day = day_of[t]
        while ptr < n_rows and day_all[order[ptr]] + horizon <= t_day:
            i = order[ptr]
            ptr += 1
            if not trainable[i]:
                continue
            end_day = int(day_all[i]) + horizon
            if linear:
                gram.add(X_all[i], float(y_all[i]), end_day)
            else:
                train_idx.append(i)

        if linear:
            n_train = gram.n
            max_end = gram.max_end_day
            if n_train >= p + 2:
                coef_aug = gram.solve()
                refits += 1
        else:
            n_train = len(train_idx)
            max_end = int(np.max(day_all[train_idx] + horizon)) if train_idx else -1
            shrink = model.estimator in ("lasso", "ridge", "elastic_net")
            # each estimator's own floor: trees need 50 rows, CV needs more
            # distinct dates than folds
            min_rows = p + 2 if shrink else max(p + 2, 50)
            feasible = n_train >= min_rows
            if feasible and shrink:
                feasible = np.unique(dates_all[train_idx]).size > n_splits
            if step % d_refit_stride == 0 and feasible:
                idx = np.asarray(train_idx)
                Xtr, ytr = X_all[idx], y_all[idx]
                if shrink:
                    fit = fit_shrinkage(Xtr, ytr, model.estimator,
                                        columns=model.columns,
                                        dates=dates_all[idx],
                                        n_splits=n_splits, grid=grid)
                else:
                    tree_seed = _derived_seed(seed, model.id, horizon, refits)
                    fit = fit_tree_ensemble(Xtr, ytr, model.estimator,
                                            params=model.params,
                                            seed=tree_seed,
                                            columns=model.columns)
                refits += 1

        audit_rows.append((t, n_train, max_end, t_day))

        ready = coef_aug is not None if linear else fit is not None
        if not ready:
            continue
        for i in rows_by_date[t]:
            if not complete[i]:
                n_dropped_incomplete += 1
                continue
            if not np.isfinite(y_all[i]):
                n_dropped_target += 1
                continue
            if linear:
                y_hat = float(coef_aug[0] + X_all[i] @ coef_aug[1:])
            else:
                y_hat = float(fit.predict(X_all[i][None, :])[0])
            out_records.append((t, tickers_all[i], float(y_all[i]), y_hat))

    out = pd.DataFrame(out_records,
                       columns=["date", "ticker", "y_true", "y_pred"])
    audit = pd.DataFrame(audit_rows,
                         columns=["date", "n_train", "max_train_end_day",
                                  "forecast_day"])
    diagnostics = {
        "refits": refits,
        "n_dropped_missing_target": n_dropped_target,
        "n_dropped_incomplete": n_dropped_incomplete,
        "audit": audit,
        "n_eval_dates": len(eval_dates),
    }
    if n_dropped_target or n_dropped_incomplete:
        log.info("walk_forward %s h=%d: dropped %d rows missing target, "
                 "%d incomplete", model.id, horizon, n_dropped_target,
                 n_dropped_incomplete)
    return ForecastSet(model_id=model.id, horizon=horizon, frame=out,
                       cutoff=cutoff, diagnostics=diagnostics)


def save_forecast_set(fs: ForecastSet, path) -> None:
    out = fs.frame.copy()
    out["date"] = pd.DatetimeIndex(out["date"]).strftime("%Y-%m-%d")
    out.to_csv(path, index=False)


def load_forecast_set(path, model_id: str, horizon: int) -> ForecastSet:
    frame = pd.read_csv(path, float_precision="round_trip")
    if list(frame.columns) != ["date", "ticker", "y_true", "y_pred"]:
        raise DataError(f"{path}: unexpected forecast header")
    frame["date"] = pd.to_datetime(frame["date"], format="%Y-%m-%d")
    cutoff = frame["date"].min() if len(frame) else pd.NaT
    return ForecastSet(model_id=model_id, horizon=horizon, frame=frame,
                       cutoff=cutoff)
