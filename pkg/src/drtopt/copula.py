"""Gaussian copula over per-OD demand marginals.

Historical counts are rank-transformed into a standard-normal layer where a
single correlation matrix is estimated offline; joint demand samples are then
drawn by pushing correlated normals through the inverse forecast CDFs.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import ODPair
from .qr import QuantileForecast

log = logging.getLogger(__name__)

MIN_EIGENVALUE = 1e-8


@dataclass
class EmpiricalCDF:
    """A CDF through (value, level) knots; step for history, linear for forecasts."""

    values: np.ndarray  # non-decreasing
    levels: np.ndarray  # strictly increasing, ends at 1
    kind: str = "linear"  # "linear" | "step"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.levels = np.asarray(self.levels, dtype=np.float64)
        if len(self.values) != len(self.levels) or len(self.values) == 0:
            raise ValueError("values and levels must be non-empty and aligned")
        if np.any(np.diff(self.values) < 0):
            raise ValueError("knot values must be non-decreasing")
        if np.any(np.diff(self.levels) <= 0):
            raise ValueError("knot levels must be strictly increasing")

    def cdf(self, x):
        """Right-continuous CDF value; zero-width segments appear as jumps."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "step":
            idx = np.searchsorted(self.values, x, side="right")
            out = np.where(idx == 0, 0.0, self.levels[np.minimum(idx, len(self.levels)) - 1])
            return out if out.ndim else float(out)
        flat_x = np.atleast_1d(x)
        flat = np.empty(len(flat_x))
        for i, xi in enumerate(flat_x):
            if xi < self.values[0]:
                flat[i] = 0.0
            elif xi >= self.values[-1]:
                flat[i] = 1.0
            else:
                # last knot with value <= xi: the highest level at a repeated
                # value, making jumps right-continuous
                j = int(np.searchsorted(self.values, xi, side="right")) - 1
                if self.values[j] == xi:
                    flat[i] = self.levels[j]
                else:
                    dv = self.values[j + 1] - self.values[j]
                    dq = self.levels[j + 1] - self.levels[j]
                    flat[i] = self.levels[j] + (xi - self.values[j]) / dv * dq
        return float(flat[0]) if np.ndim(x) == 0 else flat

    def inverse(self, u):
        """Generalized inverse; a level range inside a jump maps to the jump value."""
        u = np.asarray(u, dtype=np.float64)
        flat_u = np.atleast_1d(u)
        flat = np.empty(len(flat_u))
        for i, ui in enumerate(flat_u):
            if ui <= self.levels[0]:
                flat[i] = self.values[0]
                continue
            if ui >= self.levels[-1]:
                flat[i] = self.values[-1]
                continue
            j = int(np.searchsorted(self.levels, ui, side="left"))
            if self.kind == "step":
                flat[i] = self.values[j]
                continue
            dq = self.levels[j] - self.levels[j - 1]
            dv = self.values[j] - self.values[j - 1]  # zero width: stays at the jump
            flat[i] = self.values[j - 1] + (ui - self.levels[j - 1]) / dq * dv
        return float(flat[0]) if np.ndim(u) == 0 else flat


def ecdf_from_history(counts) -> EmpiricalCDF:
    """Step empirical CDF of observed counts."""
    counts = np.asarray(counts, dtype=np.float64)
    if len(counts) == 0:
        raise ValueError("empty history")
    values, tallies = np.unique(counts, return_counts=True)
    levels = np.cumsum(tallies) / len(counts)
    return EmpiricalCDF(values, levels, kind="step")


def ecdf_from_forecast(forecast: QuantileForecast | dict[float, float]) -> EmpiricalCDF:
    """Piecewise-linear CDF through forecast quantiles with synthetic endpoints.

    The lower endpoint is (0, 0); the upper endpoint places level 1 at the top
    quantile plus the bottom quantile.  Equal-valued knots collapse into jumps;
    an all-zero forecast degenerates to a point mass at zero.
    """
    values_map = forecast.values if isinstance(forecast, QuantileForecast) else forecast
    levels = sorted(values_map)
    knot_v = [0.0] + [float(values_map[q]) for q in levels]
    knot_q = [0.0] + [float(q) for q in levels]
    top = knot_v[-1] + float(values_map[levels[0]])
    knot_v.append(top)
    knot_q.append(1.0)

    if any(b < a for a, b in zip(knot_v, knot_v[1:])):
        raise ValueError("forecast quantiles must be non-decreasing to form a CDF")
    # zero-width segments are kept: they are probability jumps (an all-equal
    # forecast concentrates the inter-quantile mass at that single value)
    return EmpiricalCDF(knot_v, knot_q)


# ---------------------------------------------------------------------------
# Correlation estimation in the Gaussian layer
# ---------------------------------------------------------------------------


@dataclass
class GaussianCopulaModel:
    pair_order: tuple[ODPair, ...]
    marginals: dict[ODPair, EmpiricalCDF]
    corr: np.ndarray
    chol: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.pair_order)


def gaussian_scores(column: np.ndarray) -> np.ndarray:
    """Rank-based normal scores, ranks mapped to (0,1) via (r - 0.5)/n."""
    n = len(column)
    ranks = stats.rankdata(column, method="average")
    return stats.norm.ppf((ranks - 0.5) / n)


def repair_correlation(corr: np.ndarray, min_eig: float = MIN_EIGENVALUE) -> np.ndarray:
    """Clip eigenvalues and renormalize the diagonal until positive definite."""
    out = (corr + corr.T) / 2.0
    for _ in range(100):
        eigval, eigvec = np.linalg.eigh(out)
        if eigval.min() >= min_eig:
            np.fill_diagonal(out, 1.0)
            return out
        eigval = np.maximum(eigval, min_eig)
        out = (eigvec * eigval) @ eigvec.T
        d = np.sqrt(np.diag(out))
        out = out / np.outer(d, d)
        out = (out + out.T) / 2.0
    raise ValueError("could not repair correlation matrix to positive definite")


def fit_correlation(history: dict[ODPair, np.ndarray], min_lags: int = 30) -> GaussianCopulaModel:
    """Estimate the copula correlation from aligned historical count series.

    Each series is transformed to the Gaussian layer by rank normal scores;
    the correlation of the transformed matrix is repaired to positive definite
    and Cholesky factored.  All series must share timestamps (same length here).
    """
    pair_order = tuple(sorted(history))
    if not pair_order:
        raise ValueError("no OD pairs in history")
    lengths = {len(history[p]) for p in pair_order}
    if len(lengths) != 1:
        raise ValueError("historical series are not aligned on the same lags")
    n = lengths.pop()
    if n < min_lags:
        raise ValueError(f"need at least {min_lags} aligned lags to fit correlation, got {n}")

    scores = np.column_stack([gaussian_scores(np.asarray(history[p], dtype=np.float64)) for p in pair_order])
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite values in the Gaussian-layer transform")

    stds = scores.std(axis=0)
    degenerate = stds == 0.0
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} constant series contribute no correlation; zeroed",
            stacklevel=2,
        )
        stds = np.where(degenerate, 1.0, stds)
    centered = (scores - scores.mean(axis=0)) / stds
    corr = centered.T @ centered / n
    corr[degenerate, :] = 0.0
    corr[:, degenerate] = 0.0
    np.fill_diagonal(corr, 1.0)

    corr = repair_correlation(corr)
    chol = np.linalg.cholesky(corr)
    marginals = {p: ecdf_from_history(history[p]) for p in pair_order}
    return GaussianCopulaModel(pair_order, marginals, corr, chol)


def sample_joint(
    model: GaussianCopulaModel,
    forecasts: dict[ODPair, QuantileForecast],
    k: int,
    seed: int,
) -> np.ndarray:
    """Draw k joint demand vectors (k x n_pairs), columns in model.pair_order."""
    missing = [p for p in model.pair_order if p not in forecasts]
    if missing:
        raise ValueError(f"forecasts missing for pairs {missing}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((k, model.dim)) @ model.chol.T
    u = stats.norm.cdf(z)
    out = np.empty((k, model.dim))
    for j, pair in enumerate(model.pair_order):
        out[:, j] = ecdf_from_forecast(forecasts[pair]).inverse(u[:, j])
    return out


def update_correlation(
    model: GaussianCopulaModel, history: dict[ODPair, np.ndarray], min_lags: int = 30
) -> GaussianCopulaModel:
    """Refresh the copula as new history accumulates.

    The dependence structure is treated as time-invariant, so the supported
    update path is a full refit on the extended history; the hook exists so
    callers keep a single entry point.
    """
    if tuple(sorted(history)) != model.pair_order:
        raise ValueError("updated history must cover exactly the fitted pairs")
    return fit_correlation(history, min_lags)


def export_samples(samples: np.ndarray, pair_order, path, labels=None) -> None:
    """Audit CSV of joint demand samples, one row per sample."""

    def name(pair: ODPair) -> str:
        if labels is None:
            return f"{pair.origin}>{pair.destination}"
        return f"{labels[pair.origin]}>{labels[pair.destination]}"

    samples = np.atleast_2d(samples)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample"] + [name(p) for p in pair_order])
        for i, row in enumerate(samples):
            writer.writerow([i] + [f"{v:.10g}" for v in row])


def export_correlation(model: GaussianCopulaModel, path, labels=None) -> None:
    def name(pair: ODPair) -> str:
        if labels is None:
            return f"{pair.origin}>{pair.destination}"
        return f"{labels[pair.origin]}>{labels[pair.destination]}"

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([name(p) for p in model.pair_order])
        for row in model.corr:
            writer.writerow([f"{v:.12g}" for v in row])


def import_correlation(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    corr = np.array(rows)
    if corr.shape != (len(header), len(header)):
        raise ValueError(f"{path}: correlation matrix shape {corr.shape} does not match header")
    return header, corr
