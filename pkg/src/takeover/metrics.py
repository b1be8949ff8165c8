"""Regression scores: RMSE, MAE, adjusted R-squared and Pearson correlation.

``adj_r2`` uses the explained-variance R-squared, sum (yhat - ybar)^2 over
sum (y - ybar)^2, which can exceed 1 for biased predictors. The
conventional 1 - SSE/SST form is reported alongside as ``adj_r2_standard``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import MetricsError


def _pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.size != yhat.size:
        raise MetricsError(f"length mismatch: {y.size} targets vs {yhat.size} predictions")
    if y.size == 0:
        raise MetricsError("empty input")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(yhat))):
        raise MetricsError("inputs must be finite")
    return y, yhat


def rmse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return math.sqrt(float(np.mean((y - yhat) ** 2)))


def mae(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def _adjust(r2: float, n: int, m: int) -> float:
    return 1.0 - (1.0 - r2) * (n - 1) / (n - m - 1)


def _adj_r2_pair(y, yhat, m: int) -> tuple[float, float]:
    y, yhat = _pair(y, yhat)
    n = y.size
    if m < 0:
        raise MetricsError(f"predictor count must be non-negative, got {m}")
    if n <= m + 1:
        raise MetricsError(f"adjusted R2 needs N > M + 1, got N={n}, M={m}")
    ybar = y.mean()
    sst = float(np.sum((y - ybar) ** 2))
    if sst == 0.0:
        raise MetricsError("adjusted R2 undefined for a constant target")
    r2 = float(np.sum((yhat - ybar) ** 2)) / sst
    r2_std = 1.0 - float(np.sum((y - yhat) ** 2)) / sst
    return _adjust(r2, n, m), _adjust(r2_std, n, m)


def adj_r2(y, yhat, m: int) -> float:
    return _adj_r2_pair(y, yhat, m)[0]


def adj_r2_standard(y, yhat, m: int) -> float:
    return _adj_r2_pair(y, yhat, m)[1]


def corr(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    dy, dp = y - y.mean(), yhat - yhat.mean()
    syy, spp = float(np.sum(dy * dy)), float(np.sum(dp * dp))
    if syy == 0.0 or spp == 0.0:
        raise MetricsError("correlation undefined for a constant vector")
    r = float(np.sum(dp * dy)) / math.sqrt(syy * spp)
    return min(1.0, max(-1.0, r))


@dataclass(frozen=True)
class MetricsReport:
    rmse: float
    mae: float
    adj_r2: float
    adj_r2_standard: float
    corr: float
    n: int
    m: int

    def to_dict(self) -> dict:
        return asdict(self)


def report(y, yhat, m: int) -> MetricsReport:
    """All four scores. Scores undefined for degenerate input (constant
    target or constant predictions, N <= M + 1) come back as NaN rather
    than raising, so cross-validation on tiny or constant folds still reports
    RMSE and MAE."""
    y, yhat = _pair(y, yhat)
    try:
        a, a_std = _adj_r2_pair(y, yhat, m)
    except MetricsError:
        a = a_std = math.nan
    try:
        c = corr(y, yhat)
    except MetricsError:
        c = math.nan
    return MetricsReport(rmse(y, yhat), mae(y, yhat), a, a_std, c, int(y.size), int(m))
