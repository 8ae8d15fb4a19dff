"""Quantile-regression demand models over hourly OD counts.

Each model family maps a lag to a set of estimated quantiles of the demand
distribution.  Training minimizes mean tilted (pinball) loss; the linear
family is fit exactly as a linear program.  Post-processing clips count-scale
predictions at zero and optionally sorts quantiles to remove crossings.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .data import FeatureConfig, HourlySeries, ODCountSeries, ODPair, hour_of, weekday_of

log = logging.getLogger(__name__)

DEFAULT_QUANTILES = (0.05, 0.25, 0.50, 0.75, 0.95)


def tilted_loss(q: float, y, y_hat):
    """Pinball loss max(q*(y-y_hat), (q-1)*(y-y_hat)); vectorized."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must be in (0,1), got {q}")
    err = np.asarray(y, dtype=np.float64) - np.asarray(y_hat, dtype=np.float64)
    return np.maximum(q * err, (q - 1.0) * err)


def pinball_minimizing_constant(sample, q: float) -> float:
    """The constant minimizing mean tilted loss over a finite sample.

    The loss is piecewise linear in the constant with kinks only at sample
    points, so the minimum is attained at one of them; this enumerates them
    all (independent oracle used by tests and as the boosting leaf rule).
    """
    values = np.unique(np.asarray(sample, dtype=np.float64))
    losses = [float(np.mean(tilted_loss(q, sample, v))) for v in values]
    return float(values[int(np.argmin(losses))])


@dataclass
class QuantileForecast:
    """Estimated demand quantiles for one OD pair at one lag (count scale)."""

    pair: ODPair
    lag: np.datetime64
    values: dict[float, float]

    def levels(self) -> tuple[float, ...]:
        return tuple(sorted(self.values))

    def as_array(self, levels=None) -> np.ndarray:
        levels = self.levels() if levels is None else levels
        return np.array([self.values[q] for q in levels])

    def band(self, lo: float = 0.05, hi: float = 0.95) -> tuple[float, float]:
        if lo not in self.values or hi not in self.values:
            raise KeyError(f"forecast lacks band levels {lo}/{hi}")
        return self.values[lo], self.values[hi]


def finalize_quantiles(levels, raw_values, sort_quantiles: bool) -> dict[float, float]:
    """Count-scale post-processing: clip negatives to zero, optionally sort."""
    vals = np.maximum(np.asarray(raw_values, dtype=np.float64), 0.0)
    if sort_quantiles:
        vals = np.sort(vals)
    return {float(q): float(v) for q, v in zip(levels, vals)}


# ---------------------------------------------------------------------------
# Historical percentiles
# ---------------------------------------------------------------------------


@dataclass
class HPModel:
    """Per (day-of-week, time-of-day) bucket of historical counts."""

    pair: ODPair
    levels: tuple[float, ...]
    buckets: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]]  # (dow,tod) -> (ts, counts)


def fit_hp(train: ODCountSeries, levels=DEFAULT_QUANTILES) -> HPModel:
    dows = weekday_of(train.timestamps)
    tods = hour_of(train.timestamps)
    buckets: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
    for key in {(int(d), int(h)) for d, h in zip(dows, tods)}:
        sel = (dows == key[0]) & (tods == key[1])
        buckets[key] = (train.timestamps[sel], train.counts[sel].astype(np.float64))
    return HPModel(train.pair, tuple(levels), buckets)


def predict_hp(model: HPModel, t: np.datetime64) -> QuantileForecast:
    """Quantiles of same-weekday same-hour history strictly before t.

    Uses the linear-interpolation percentile; levels 0 and 1 give the bucket
    min and max.
    """
    t = np.datetime64(t, "h")
    key = (int(weekday_of(t)), int(hour_of(t)))
    if key not in model.buckets:
        raise ValueError(f"no history for weekday {key[0]} hour {key[1]}")
    ts, values = model.buckets[key]
    values = values[ts < t]
    if len(values) == 0:
        raise ValueError(f"no history before {t} in bucket weekday {key[0]} hour {key[1]}")
    est = {float(q): float(np.percentile(values, 100.0 * q)) for q in model.levels}
    return QuantileForecast(model.pair, t, est)


# ---------------------------------------------------------------------------
# Linear quantile regression
# ---------------------------------------------------------------------------


@dataclass
class LinearQRModel:
    levels: tuple[float, ...]
    coef: dict[float, np.ndarray]
    sort_quantiles: bool = True
    converged: dict[float, bool] = field(default_factory=dict)
    feature_cfg: FeatureConfig | None = None


def _solve_pinball_lp(X: np.ndarray, y: np.ndarray, q: float) -> tuple[np.ndarray, bool]:
    """Exact pinball-loss minimization as an LP: min q*u + (1-q)*v, Xb + u - v = y."""
    n, p = X.shape
    A = sparse.hstack(
        [sparse.csr_matrix(X), sparse.identity(n, format="csr"), -sparse.identity(n, format="csr")],
        format="csc",
    )
    c = np.concatenate([np.zeros(p), np.full(n, q / n), np.full(n, (1.0 - q) / n)])
    bounds = [(None, None)] * p + [(0, None)] * (2 * n)
    res = linprog(c, A_eq=A, b_eq=y, bounds=bounds, method="highs")
    if res.x is None:
        raise RuntimeError(f"quantile LP failed at q={q}: {res.message}")
    if res.status != 0:
        log.warning("quantile LP did not converge cleanly at q=%s: %s", q, res.message)
    return res.x[:p].copy(), res.status == 0


def fit_lqr(
    X: np.ndarray,
    y: np.ndarray,
    levels=DEFAULT_QUANTILES,
    *,
    sort_quantiles: bool = True,
    feature_cfg: FeatureConfig | None = None,
) -> LinearQRModel:
    """Fit one coefficient vector per quantile level by exact LP.

    Requires at least twice as many rows as features and finite inputs.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D and aligned with y")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in training data")
    if len(X) < 2 * X.shape[1]:
        raise ValueError(f"need >= {2 * X.shape[1]} rows to fit {X.shape[1]} features, got {len(X)}")
    coef, converged = {}, {}
    for q in levels:
        beta, ok = _solve_pinball_lp(X, y, float(q))
        coef[float(q)] = beta
        converged[float(q)] = ok
    return LinearQRModel(tuple(float(q) for q in levels), coef, sort_quantiles, converged, feature_cfg)


def predict_lqr(
    model: LinearQRModel,
    features: np.ndarray,
    prev_count: float,
    seasonal_scale: tuple[float, float] | None = None,
) -> dict[float, float]:
    """Count-scale quantile predictions for one feature vector.

    The model output lives on the (possibly seasonally normalized) differenced
    scale; predictions are mapped back by the inverse normalization, then
    un-differenced by adding the previous observed count, clipped at zero and
    sorted if the model asks for it.
    """
    x = np.asarray(features, dtype=np.float64)
    raw = []
    for q in model.levels:
        beta = model.coef[q]
        if beta.shape != x.shape:
            raise ValueError(f"feature length {x.shape} does not match model layout {beta.shape}")
        v = float(beta @ x)
        if seasonal_scale is not None:
            mean, std = seasonal_scale
            v = v * std + mean
        raw.append(v + prev_count)
    return finalize_quantiles(model.levels, raw, model.sort_quantiles)


# ---------------------------------------------------------------------------
# Seasonal normalization of the differenced series
# ---------------------------------------------------------------------------


@dataclass
class SeasonalStats:
    """Per (day-of-week, hour) mean and population std of the train series."""

    mean: dict[tuple[int, int], float]
    std: dict[tuple[int, int], float]

    def scale_at(self, t: np.datetime64) -> tuple[float, float]:
        key = (int(weekday_of(t)), int(hour_of(t)))
        m = self.mean.get(key, 0.0)
        s = self.std.get(key, 1.0)
        return (m, s) if s > 0 else (0.0, 1.0)


def fit_seasonal_stats(train: HourlySeries) -> SeasonalStats:
    dows = weekday_of(train.timestamps)
    tods = hour_of(train.timestamps)
    mean, std = {}, {}
    degenerate = 0
    for key in {(int(d), int(h)) for d, h in zip(dows, tods)}:
        sel = (dows == key[0]) & (tods == key[1])
        v = train.values[sel]
        mean[key] = float(np.mean(v))
        s = float(np.std(v))
        std[key] = s
        if s == 0.0:
            degenerate += 1
    if degenerate:
        warnings.warn(
            f"{degenerate} seasonal cell(s) have zero variance; passing them through unscaled",
            stacklevel=2,
        )
    return SeasonalStats(mean, std)


def seasonal_normalize(series: HourlySeries, stats: SeasonalStats) -> HourlySeries:
    """(y - bucket mean) / bucket std; zero-variance buckets pass through."""
    scales = np.array([stats.scale_at(t) for t in series.timestamps])
    values = (series.values - scales[:, 0]) / scales[:, 1]
    return HourlySeries(series.pair, series.timestamps, values)


def seasonal_denormalize(series: HourlySeries, stats: SeasonalStats) -> HourlySeries:
    scales = np.array([stats.scale_at(t) for t in series.timestamps])
    values = series.values * scales[:, 1] + scales[:, 0]
    return HourlySeries(series.pair, series.timestamps, values)


# ---------------------------------------------------------------------------
# Hyperparameter grid search
# ---------------------------------------------------------------------------


def grid_search(score_fn, grid):
    """Pick the grid point with minimal score; ties go to the earliest point.

    score_fn maps a grid point to a total mean-tilted-loss value on the
    tuning test set.  Returns (best_point, scores).
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty hyperparameter grid")
    scores = [float(score_fn(point)) for point in grid]
    best = int(np.argmin(scores))  # argmin takes the first minimum
    return grid[best], scores
