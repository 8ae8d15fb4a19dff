"""Hourly origin-destination movement counts: ingestion, preprocessing, features.

The raw signal is a set of hourly count series, one per ordered pair of
serviced locations.  Before model fitting the series are first-differenced
(within contiguous hourly blocks only), checked for stationarity, and
stripped of night/holiday hours.  Regression features are calendar one-hots
plus autoregressive lags on the working scale.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from datetime import date

import numpy as np

log = logging.getLogger(__name__)

HOUR = np.timedelta64(1, "h")

# Hours of day covered by the time-of-day one-hot (night hours are masked out).
TOD_HOURS = tuple(range(7, 23))
DEFAULT_MASKED_HOURS = frozenset({23, 0, 1, 2, 3, 4, 5, 6})


def parse_hour(text: str) -> np.datetime64:
    """Parse an ISO-8601 hour timestamp such as ``2017-11-17T08``."""
    try:
        ts = np.datetime64(text.strip(), "h")
    except ValueError as exc:
        raise ValueError(f"bad hourly timestamp {text!r}") from exc
    return ts


def format_hour(ts: np.datetime64) -> str:
    return str(np.datetime64(ts, "h"))


def hour_of(ts) -> np.ndarray | int:
    """Hour of day, vectorized over datetime64[h]."""
    return np.asarray(ts, dtype="datetime64[h]").astype("int64") % 24


def weekday_of(ts) -> np.ndarray | int:
    """Day of week with Monday = 0 (epoch day 1970-01-01 was a Thursday)."""
    days = np.asarray(ts, dtype="datetime64[h]").astype("int64") // 24
    return (days + 3) % 7


def date_of(ts: np.datetime64) -> date:
    return np.datetime64(ts, "h").astype("datetime64[D]").astype(date)


@dataclass(frozen=True)
class Location:
    """A serviced location (demand node or bus stop). Coordinates in meters."""

    id: int
    label: str
    coord: tuple[float, float] | None = None


@dataclass(frozen=True, order=True)
class ODPair:
    origin: int
    destination: int

    def __post_init__(self):
        if self.origin == self.destination:
            raise ValueError(f"self-loop OD pair {self.origin}->{self.destination}")


@dataclass
class ODCountSeries:
    """Observed hourly movement counts for one OD pair."""

    pair: ODPair
    timestamps: np.ndarray  # datetime64[h], strictly increasing
    counts: np.ndarray  # int64, >= 0

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[h]")
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.timestamps.shape != self.counts.shape:
            raise ValueError("timestamps and counts must align")
        if len(self.timestamps) > 1 and not np.all(np.diff(self.timestamps) > np.timedelta64(0, "h")):
            raise ValueError("timestamps must be strictly increasing")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def values(self) -> np.ndarray:
        return self.counts.astype(np.float64)


@dataclass
class HourlySeries:
    """A transformed (differenced / normalized / masked) hourly series."""

    pair: ODPair
    timestamps: np.ndarray  # datetime64[h], strictly increasing
    values: np.ndarray  # float64

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[h]")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.timestamps.shape != self.values.shape:
            raise ValueError("timestamps and values must align")

    def __len__(self) -> int:
        return len(self.timestamps)


def contiguous_blocks(timestamps: np.ndarray) -> list[slice]:
    """Slices of maximal runs of consecutive hourly timestamps."""
    n = len(timestamps)
    if n == 0:
        return []
    gaps = np.flatnonzero(np.diff(timestamps) != HOUR)
    starts = np.concatenate([[0], gaps + 1])
    ends = np.concatenate([gaps + 1, [n]])
    return [slice(int(a), int(b)) for a, b in zip(starts, ends)]


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

CSV_HEADER = ("timestamp", "origin", "destination", "count")


@dataclass
class ODDataset:
    """Locations plus one count series per OD pair appearing in a file."""

    locations: list[Location]
    series: dict[ODPair, ODCountSeries]

    @property
    def pairs(self) -> list[ODPair]:
        return sorted(self.series)

    def label_of(self, loc_id: int) -> str:
        return self.locations[loc_id].label


def load_od_counts(path) -> ODDataset:
    """Load hourly OD counts from CSV (``timestamp,origin,destination,count``).

    Location ids are assigned densely in sorted label order.  Rows with
    origin == destination, non-integer counts, or duplicate (timestamp, pair)
    keys are rejected with the offending line number.
    """
    rows: list[tuple[np.datetime64, str, str, int]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(CSV_HEADER):
            raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            ts_text, origin, destination, count_text = (f.strip() for f in row)
            try:
                ts = parse_hour(ts_text)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if origin == destination:
                raise ValueError(f"{path}:{lineno}: self-loop OD pair {origin!r}")
            try:
                count = int(count_text)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-integer count {count_text!r}") from None
            if count < 0:
                raise ValueError(f"{path}:{lineno}: negative count {count}")
            rows.append((ts, origin, destination, count))

    labels = sorted({r[1] for r in rows} | {r[2] for r in rows})
    index = {lab: i for i, lab in enumerate(labels)}
    locations = [Location(i, lab) for i, lab in enumerate(labels)]

    grouped: dict[ODPair, dict[np.datetime64, int]] = {}
    for ts, origin, destination, count in rows:
        pair = ODPair(index[origin], index[destination])
        bucket = grouped.setdefault(pair, {})
        if ts in bucket:
            raise ValueError(
                f"{path}: duplicate observation for pair {origin}->{destination} at {format_hour(ts)}"
            )
        bucket[ts] = count

    series = {}
    for pair, bucket in grouped.items():
        ts_sorted = np.array(sorted(bucket), dtype="datetime64[h]")
        counts = np.array([bucket[t] for t in ts_sorted], dtype=np.int64)
        series[pair] = ODCountSeries(pair, ts_sorted, counts)
    return ODDataset(locations, series)


def save_od_counts(path, dataset: ODDataset) -> None:
    """Write a dataset back to the canonical CSV format (sorted, loss-free)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for pair in dataset.pairs:
            s = dataset.series[pair]
            o = dataset.label_of(pair.origin)
            d = dataset.label_of(pair.destination)
            for ts, c in zip(s.timestamps, s.counts):
                writer.writerow([format_hour(ts), o, d, int(c)])


# ---------------------------------------------------------------------------
# Differencing / masking / splitting
# ---------------------------------------------------------------------------


def difference(series: ODCountSeries | HourlySeries) -> HourlySeries:
    """First differences y'_t = y_t - y_{t-1} within contiguous hourly blocks.

    The first lag of every contiguous block is dropped so that no difference
    spans a gap in the record.
    """
    if len(series) < 2:
        raise ValueError("series too short to difference (need >= 2 lags)")
    values = series.values
    ts_out, val_out = [], []
    for block in contiguous_blocks(series.timestamps):
        v = values[block]
        if len(v) < 2:
            continue
        ts_out.append(series.timestamps[block][1:])
        val_out.append(np.diff(v))
    if not ts_out:
        raise ValueError("no contiguous run of >= 2 hourly lags to difference")
    return HourlySeries(series.pair, np.concatenate(ts_out), np.concatenate(val_out))


def undifference(diffed: HourlySeries, y0: float) -> np.ndarray:
    """Cumulative reconstruction from the block's starting value y0."""
    return y0 + np.cumsum(diffed.values)


@dataclass(frozen=True)
class SplitSpec:
    """Train/test date ranges plus masked hours and holiday date ranges."""

    train_range: tuple[date, date]
    test_range: tuple[date, date]
    masked_hours: frozenset[int] = DEFAULT_MASKED_HOURS
    masked_dates: tuple[tuple[date, date], ...] = ()

    def __post_init__(self):
        if self.train_range[1] >= self.test_range[0]:
            raise ValueError("train range must precede test range")

    def is_masked(self, ts: np.datetime64) -> bool:
        if int(hour_of(ts)) in self.masked_hours:
            return True
        d = date_of(ts)
        return any(a <= d <= b for a, b in self.masked_dates)

    def mask_array(self, timestamps: np.ndarray) -> np.ndarray:
        """Boolean array, True where the lag is masked out."""
        masked = np.isin(hour_of(timestamps), list(self.masked_hours))
        if self.masked_dates:
            days = timestamps.astype("datetime64[D]")
            for a, b in self.masked_dates:
                masked |= (days >= np.datetime64(a)) & (days <= np.datetime64(b))
        return masked

    def in_train(self, timestamps: np.ndarray) -> np.ndarray:
        days = np.asarray(timestamps, dtype="datetime64[h]").astype("datetime64[D]")
        return (days >= np.datetime64(self.train_range[0])) & (days <= np.datetime64(self.train_range[1]))

    def in_test(self, timestamps: np.ndarray) -> np.ndarray:
        days = np.asarray(timestamps, dtype="datetime64[h]").astype("datetime64[D]")
        return (days >= np.datetime64(self.test_range[0])) & (days <= np.datetime64(self.test_range[1]))


# Case-study defaults: 52 train days, 7 test days, nights and the Christmas
# holiday masked, exams in mid-December.
CAMPUS_2017_EXAMS = (date(2017, 12, 8), date(2017, 12, 22))


def campus_2017_split() -> SplitSpec:
    return SplitSpec(
        train_range=(date(2017, 11, 17), date(2018, 1, 7)),
        test_range=(date(2018, 1, 8), date(2018, 1, 14)),
        masked_hours=DEFAULT_MASKED_HOURS,
        masked_dates=((date(2017, 12, 23), date(2018, 1, 1)),),
    )


def mask_lags(series, spec: SplitSpec):
    """Drop all lags whose hour or date is masked; ordering preserved."""
    keep = ~spec.mask_array(series.timestamps)
    if isinstance(series, ODCountSeries):
        return ODCountSeries(series.pair, series.timestamps[keep], series.counts[keep])
    return HourlySeries(series.pair, series.timestamps[keep], series.values[keep])


# ---------------------------------------------------------------------------
# Augmented Dickey-Fuller unit-root test (constant, no trend)
# ---------------------------------------------------------------------------

# Response-surface coefficients for the 1% critical value of the tau statistic
# with a constant term (MacKinnon 2010): crit = b0 + b1/n + b2/n^2 + b3/n^3.
_ADF_CRIT_1PCT = (-3.43035, -6.5393, -16.786, -83.133)


@dataclass(frozen=True)
class AdfResult:
    statistic: float
    crit_1pct: float
    reject_unit_root: bool
    nobs: int
    lags: int


def default_adf_lags(n: int) -> int:
    """Schwert's rule of thumb: floor(12 * (n/100)^0.25)."""
    return int(np.floor(12.0 * (n / 100.0) ** 0.25))


def adf_test(values, max_lag: int | None = None) -> AdfResult:
    """Augmented Dickey-Fuller test with constant, decision at the 1% level.

    Regresses dy_t on (1, y_{t-1}, dy_{t-1}, ..., dy_{t-max_lag}) by least
    squares; the tau statistic is the t-ratio on y_{t-1}, compared against
    the MacKinnon finite-sample 1% critical value.
    """
    y = np.asarray(values, dtype=np.float64)
    n = len(y)
    if max_lag is None:
        max_lag = default_adf_lags(n)
    if max_lag < 0:
        raise ValueError("max_lag must be >= 0")
    if n <= max_lag + 2:
        raise ValueError(f"series of length {n} too short for max_lag={max_lag}")

    dy = np.diff(y)
    nobs = len(dy) - max_lag
    if nobs <= max_lag + 2:
        raise ValueError(f"too few effective observations ({nobs}) for max_lag={max_lag}")
    rhs = [np.ones(nobs), y[max_lag:-1]]
    for k in range(1, max_lag + 1):
        rhs.append(dy[max_lag - k : len(dy) - k])
    X = np.column_stack(rhs)
    target = dy[max_lag:]

    beta, _, rank, _ = np.linalg.lstsq(X, target, rcond=None)
    if rank < X.shape[1]:
        raise ValueError("singular regression matrix in ADF test")
    resid = target - X @ beta
    dof = nobs - X.shape[1]
    sigma2 = resid @ resid / dof
    xtx_inv = np.linalg.inv(X.T @ X)
    se = np.sqrt(sigma2 * xtx_inv[1, 1])
    stat = float(beta[1] / se)

    b0, b1, b2, b3 = _ADF_CRIT_1PCT
    crit = b0 + b1 / nobs + b2 / nobs**2 + b3 / nobs**3
    return AdfResult(stat, float(crit), stat < crit, nobs, max_lag)


def check_stationarity(series: HourlySeries, max_lag: int | None = None) -> AdfResult:
    """Run the ADF test and warn (but proceed) when a unit root is not rejected."""
    result = adf_test(series.values, max_lag)
    if not result.reject_unit_root:
        warnings.warn(
            f"pair {series.pair.origin}->{series.pair.destination}: ADF statistic "
            f"{result.statistic:.3f} does not reject a unit root at 1% "
            f"(critical {result.crit_1pct:.3f}); proceeding anyway",
            stacklevel=2,
        )
    return result


# ---------------------------------------------------------------------------
# Feature construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureConfig:
    """Which blocks go into the regression feature vector.

    The layout is fixed: time-of-day one-hot (16), day-of-week one-hot (7),
    optional exam flag, then either ``ar_order`` own-series lags or
    ``cross_order`` lags of every pair, then an optional pair one-hot.
    """

    exam_period: tuple[date, date] | None = None
    ar_order: int = 24
    cross_lags: bool = False
    cross_order: int = 1
    od_onehot: bool = False
    pair_order: tuple[ODPair, ...] | None = None

    def resolved_pair_order(self, history: dict[ODPair, HourlySeries]) -> tuple[ODPair, ...]:
        if self.pair_order is not None:
            return self.pair_order
        return tuple(sorted(history))

    def n_features(self, n_pairs: int) -> int:
        n = len(TOD_HOURS) + 7
        if self.exam_period is not None:
            n += 1
        n += self.cross_order * n_pairs if self.cross_lags else self.ar_order
        if self.od_onehot:
            n += n_pairs
        return n


@dataclass
class LagFeatures:
    """One feature vector, kept as named blocks for inspection."""

    tod_onehot: np.ndarray
    dow_onehot: np.ndarray
    exam_flag: int | None
    ar_lags: np.ndarray
    od_onehot: np.ndarray | None

    def vector(self) -> np.ndarray:
        parts = [self.tod_onehot, self.dow_onehot]
        if self.exam_flag is not None:
            parts.append([float(self.exam_flag)])
        parts.append(self.ar_lags)
        if self.od_onehot is not None:
            parts.append(self.od_onehot)
        return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts])


def _recent_values(series: HourlySeries, t: np.datetime64, k: int) -> np.ndarray:
    """Last k retained values strictly before t (positional, newest last)."""
    idx = int(np.searchsorted(series.timestamps, t))
    if idx < k:
        raise ValueError(
            f"insufficient history before {format_hour(t)}: need {k}, have {idx}"
        )
    return series.values[idx - k : idx]


def build_features(
    history: dict[ODPair, HourlySeries],
    t: np.datetime64,
    pair: ODPair,
    cfg: FeatureConfig,
) -> LagFeatures:
    """Deterministic feature vector for predicting pair demand at lag t.

    Autoregressive blocks use the previous retained lags of the working-scale
    series (masked hours simply do not appear in the history).
    """
    t = np.datetime64(t, "h")
    hour = int(hour_of(t))
    if hour not in TOD_HOURS:
        raise ValueError(f"hour {hour} outside modeled range {TOD_HOURS[0]}..{TOD_HOURS[-1]}")
    tod = np.zeros(len(TOD_HOURS))
    tod[hour - TOD_HOURS[0]] = 1.0
    dow = np.zeros(7)
    dow[int(weekday_of(t))] = 1.0

    exam = None
    if cfg.exam_period is not None:
        a, b = cfg.exam_period
        exam = int(a <= date_of(t) <= b)

    if cfg.cross_lags:
        order = cfg.resolved_pair_order(history)
        blocks = []
        for k in range(1, cfg.cross_order + 1):
            for p in order:
                blocks.append(_recent_values(history[p], t, k)[0])
        ar = np.asarray(blocks, dtype=np.float64)
    else:
        # newest-first: position j holds the (j+1)-lagged value
        ar = _recent_values(history[pair], t, cfg.ar_order)[::-1].copy()

    onehot = None
    if cfg.od_onehot:
        order = cfg.resolved_pair_order(history)
        onehot = np.zeros(len(order))
        onehot[order.index(pair)] = 1.0

    return LagFeatures(tod, dow, exam, ar, onehot)
