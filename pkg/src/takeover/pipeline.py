"""Experiment harness: repeated k-fold CV, grid search, importance-guided
forward selection, cumulative time-bin analysis and a least-squares baseline.

Every run is a pure function of the dataset, the configuration and the seed
list. Per seed, rows are shuffled with that seed, split into ``k`` folds, and
the pooled out-of-fold predictions are scored once.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import booster, explain, metrics
from .booster import Hyperparams
from .dataset import Dataset
from .errors import PipelineError
from .metrics import MetricsReport

log = logging.getLogger(__name__)

DEFAULT_GRID: dict[str, list] = {
    "n_estimators": [50, 100, 200],
    "learning_rate": [0.05, 0.1, 0.3],
    "max_depth": [2, 3, 4, 6],
    "subsample": [0.8, 1.0],
    "colsample_bytree": [0.8, 1.0],
}

_METRIC_FIELDS = ("rmse", "mae", "adj_r2", "adj_r2_standard", "corr")


@dataclass(frozen=True)
class CVReport:
    per_seed: list[tuple[int, MetricsReport]]
    mean: MetricsReport
    min_mae: float
    max_mae: float
    feature_set: list[str]
    params: Hyperparams | None
    model: str = "boosted"

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "feature_set": list(self.feature_set),
            "params": None if self.params is None else self.params.to_dict(),
            "mean": self.mean.to_dict(),
            "min_mae": self.min_mae,
            "max_mae": self.max_mae,
            "per_seed": [{"seed": s, **r.to_dict()} for s, r in self.per_seed],
        }


@dataclass(frozen=True)
class SelectionReport:
    ranking: list[tuple[str, float]]
    steps: list[tuple[str, CVReport]]
    chosen: list[str]

    def to_dict(self) -> dict:
        return {
            "ranking": [{"variable": n, "score": s} for n, s in self.ranking],
            "steps": [{"feature_added": f, "cv": r.to_dict()} for f, r in self.steps],
            "chosen": list(self.chosen),
        }

    def to_csv(self) -> str:
        rows = [
            [", ".join(r.feature_set), r.mean.rmse, r.mean.mae, r.mean.adj_r2, r.mean.corr]
            for _, r in self.steps
        ]
        return _table(("feature_set", "rmse", "mae", "adj_r2", "corr"), rows)


@dataclass(frozen=True)
class BinRow:
    upper_bound: float
    sample_count: int
    report: CVReport | None
    skipped: bool = False
    note: str = ""

    @property
    def min_mae(self) -> float:
        return math.nan if self.report is None else self.report.min_mae

    @property
    def max_mae(self) -> float:
        return math.nan if self.report is None else self.report.max_mae


@dataclass(frozen=True)
class BinReport:
    rows: list[BinRow]

    def to_dict(self) -> dict:
        return {
            "rows": [
                {
                    "upper_bound": r.upper_bound,
                    "sample_count": r.sample_count,
                    "skipped": r.skipped,
                    "note": r.note,
                    "metrics": None if r.report is None else r.report.mean.to_dict(),
                    "min_mae": None if r.report is None else r.min_mae,
                    "max_mae": None if r.report is None else r.max_mae,
                }
                for r in self.rows
            ]
        }

    def to_csv(self) -> str:
        rows = []
        for r in self.rows:
            if r.report is None:
                rows.append([r.upper_bound, r.sample_count] + [""] * 6)
                continue
            mu = r.report.mean
            rows.append([r.upper_bound, r.sample_count, mu.rmse, mu.adj_r2, mu.mae, r.min_mae, r.max_mae, mu.corr])
        return _table(("upper_bound", "samples", "rmse", "adj_r2", "mae", "min_mae", "max_mae", "corr"), rows)


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coefficients: np.ndarray
    feature_names: list[str] = field(default_factory=list)
    fill_values: np.ndarray = field(default_factory=lambda: np.empty(0))

    def design(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        X = X.reshape(1, -1) if X.ndim == 1 else X
        return np.where(np.isnan(X), self.fill_values, X)

    def predict(self, X) -> np.ndarray:
        return self.intercept + self.design(X) @ self.coefficients

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "coefficients": dict(zip(self.feature_names, self.coefficients.tolist())),
            "fill_values": dict(zip(self.feature_names, self.fill_values.tolist())),
        }


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def _table(header: Sequence[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def fold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Shuffle ``range(n)`` with ``seed`` and cut it into ``k`` folds whose sizes differ by at most one."""
    if k < 2:
        raise PipelineError(f"fold count must be at least 2, got {k}")
    if k > n:
        raise PipelineError(f"fold count {k} exceeds row count {n}")
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, k)


def _fit_predict_boosted(train: Dataset, X_test: np.ndarray, p: Hyperparams) -> np.ndarray:
    return booster.predict_many(booster.train(train, p), X_test)


def _fit_predict_linear(train: Dataset, X_test: np.ndarray, p=None) -> np.ndarray:
    return fit_linear(train, check_rank=False).predict(X_test)


def _seed_predictions(args) -> np.ndarray:
    d, k, seed, fit_predict, p = args
    pred = np.empty(len(d))
    p = None if p is None else replace(p, seed=seed)
    for fold in fold_indices(len(d), k, seed):
        train_rows = np.setdiff1d(np.arange(len(d)), fold)
        pred[fold] = fit_predict(d.subset(train_rows), d.X[fold], p)
    return pred


def _aggregate(per_seed: list[tuple[int, MetricsReport]], features, p, model) -> CVReport:
    reports = [r for _, r in per_seed]
    mean = MetricsReport(
        **{f: float(np.mean([getattr(r, f) for r in reports])) for f in _METRIC_FIELDS},
        n=reports[0].n,
        m=reports[0].m,
    )
    maes = [r.mae for r in reports]
    return CVReport(list(per_seed), mean, float(min(maes)), float(max(maes)), list(features), p, model)


def _run_cv(d: Dataset, k: int, seeds: Sequence[int], features, fit_predict: Callable, p, model: str, n_jobs: int) -> CVReport:
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise PipelineError("seed list is empty")
    features = list(d.names if features is None else features)
    sub = d.select(features)
    if k > len(sub):
        raise PipelineError(f"fold count {k} exceeds row count {len(sub)}")
    jobs = [(sub, k, s, fit_predict, p) for s in seeds]
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            preds = list(pool.map(_seed_predictions, jobs))
    else:
        preds = [_seed_predictions(j) for j in jobs]
    per_seed = [(s, metrics.report(sub.y, pr, len(features))) for s, pr in zip(seeds, preds)]
    return _aggregate(per_seed, features, p, model)


def cross_validate(
    d: Dataset,
    p: Hyperparams,
    k: int = 10,
    seeds: Sequence[int] = range(100),
    features: Sequence[str] | None = None,
    n_jobs: int = 1,
) -> CVReport:
    """Repeated k-fold CV of the boosted model. Each repetition also reseeds
    the booster's row and column sampling with the repetition's seed."""
    if features is not None and len(features) == 0:
        raise PipelineError("feature set must be non-empty")
    return _run_cv(d, k, seeds, features, _fit_predict_boosted, p, "boosted", n_jobs)


def grid_points(grid: Mapping[str, Sequence]) -> list[dict]:
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise PipelineError("grid must name at least one value per parameter")
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def grid_search(
    d: Dataset,
    grid: Mapping[str, Sequence] = DEFAULT_GRID,
    k: int = 10,
    seeds: Sequence[int] = range(100),
    features: Sequence[str] | None = None,
    base: Hyperparams | None = None,
    n_jobs: int = 1,
) -> tuple[Hyperparams, CVReport]:
    """Exhaustive search minimising mean CV RMSE; ties prefer fewer trees,
    then shallower trees, then earlier grid order."""
    base = base or Hyperparams()
    best = None
    for order, point in enumerate(grid_points(grid)):
        p = replace(base, **point)
        rep = cross_validate(d, p, k, seeds, features, n_jobs)
        key = (rep.mean.rmse, p.n_estimators, p.max_depth, order)
        log.info("grid point %s: rmse %.6f", point, rep.mean.rmse)
        if best is None or key < best[0]:
            best = (key, p, rep)
    return best[1], best[2]


def forward_select(
    d: Dataset,
    p: Hyperparams,
    k: int = 10,
    seeds: Sequence[int] = range(100),
    n_jobs: int = 1,
) -> SelectionReport:
    """Add variables in global-importance order until mean CV RMSE stops
    strictly decreasing. The ranking comes from one model trained on every
    variable over the full dataset."""
    full = booster.train(d, p)
    ranking = explain.global_importance(full, d).ranking
    order = [name for name, _ in ranking]
    steps: list[tuple[str, CVReport]] = []
    chosen: list[str] = []
    for i, name in enumerate(order):
        rep = cross_validate(d, p, k, seeds, order[: i + 1], n_jobs)
        log.info("selection step %d (+%s): rmse %.6f", i + 1, name, rep.mean.rmse)
        steps.append((name, rep))
        if steps[:-1] and not rep.mean.rmse < steps[-2][1].mean.rmse:
            break
        chosen = order[: i + 1]
    return SelectionReport(ranking, steps, chosen)


def bin_analysis(
    d: Dataset,
    p: Hyperparams,
    k: int = 10,
    seeds: Sequence[int] = range(100),
    features: Sequence[str] | None = None,
    bounds: Sequence[float] = (2, 3, 4, 5, 6, 7, 8, 9),
    n_jobs: int = 1,
) -> BinReport:
    """Cross-validate on the cumulative subsets ``target <= bound``."""
    bounds = [float(b) for b in bounds]
    if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
        raise PipelineError(f"bin bounds must be strictly increasing, got {bounds}")
    rows = []
    for b in bounds:
        idx = np.flatnonzero(d.y <= b)
        if idx.size < max(k, 2):
            note = f"only {idx.size} rows with target <= {b:g} s; need at least {k}"
            log.warning("skipping bin: %s", note)
            rows.append(BinRow(b, int(idx.size), None, True, note))
            continue
        rep = cross_validate(d.subset(idx), p, k, seeds, features, n_jobs)
        rows.append(BinRow(b, int(idx.size), rep))
    return BinReport(rows)


def _rank_deficient_columns(A: np.ndarray, names: Sequence[str]) -> list[str]:
    bad, rank = [], 0
    for j in range(A.shape[1]):
        r = np.linalg.matrix_rank(A[:, : j + 1])
        if r == rank:
            bad.append(names[j])
        rank = r
    return bad


def fit_linear(d: Dataset, features: Sequence[str] | None = None, check_rank: bool = True) -> LinearModel:
    """Least squares with per-column mean imputation of missing predictors."""
    sub = d if features is None else d.select(features)
    X = sub.X
    with np.errstate(invalid="ignore"):
        fill = np.array([np.nanmean(c) if np.any(~np.isnan(c)) else 0.0 for c in X.T])
    Xf = np.where(np.isnan(X), fill, X)
    A = np.column_stack([np.ones(len(sub)), Xf])
    if check_rank and np.linalg.matrix_rank(A) < A.shape[1]:
        bad = _rank_deficient_columns(A, ["intercept"] + sub.names)
        raise PipelineError(f"design matrix is rank deficient; dependent columns: {bad}")
    coef, *_ = np.linalg.lstsq(A, sub.y, rcond=None)
    return LinearModel(float(coef[0]), coef[1:], sub.names, fill)


def fit_linear_baseline(
    d: Dataset,
    features: Sequence[str] | None = None,
    k: int = 10,
    seeds: Sequence[int] = range(100),
    n_jobs: int = 1,
) -> tuple[LinearModel, CVReport]:
    """OLS baseline scored exactly like :func:`cross_validate`.

    Imputation means come from the training folds only. An empty feature
    list gives the intercept-only model.
    """
    features = list(d.names if features is None else features)
    model = fit_linear(d, features)
    rep = _run_cv(d, k, seeds, features, _fit_predict_linear, None, "linear", n_jobs)
    return model, rep
