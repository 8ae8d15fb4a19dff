"""Training and prediction orchestration across OD pairs.

Wires the preprocessing chain (difference, mask, optional seasonal
normalization) into the model families, produces per-lag forecasts on the
count scale, and serializes trained models to versioned JSON.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np

from . import boosting, qr
from .data import (
    HOUR,
    FeatureConfig,
    HourlySeries,
    ODCountSeries,
    ODDataset,
    ODPair,
    SplitSpec,
    build_features,
    check_stationarity,
    difference,
    format_hour,
    mask_lags,
    parse_hour,
)

log = logging.getLogger(__name__)

MODEL_SCHEMA_VERSION = 1
FAMILIES = ("hp", "linear", "gboost")
SCOPES = ("per_pair", "pooled")


@dataclass(frozen=True)
class ModelSpec:
    """Which family to fit and how the feature map is configured."""

    family: str = "linear"
    scope: str = "per_pair"
    sort_quantiles: bool = True
    exam_period: tuple[date, date] | None = None
    seasonal_normalize: bool = False
    cross_lags: bool = False
    cross_order: int = 1
    ar_order: int = 24
    gboost: boosting.GBoostHyper = boosting.GBoostHyper()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        if self.scope not in SCOPES:
            raise ValueError(f"unknown model scope {self.scope!r}")
        if self.cross_lags and self.scope == "pooled":
            raise ValueError("cross-pair lags and pooled scope are mutually exclusive")
        if self.family == "hp" and self.scope == "pooled":
            raise ValueError("historical percentiles are fit per pair only")

    def feature_config(self, pair_order: tuple[ODPair, ...]) -> FeatureConfig:
        return FeatureConfig(
            exam_period=self.exam_period,
            ar_order=self.ar_order,
            cross_lags=self.cross_lags,
            cross_order=self.cross_order,
            od_onehot=self.scope == "pooled",
            pair_order=pair_order,
        )


@dataclass
class TrainedDemandModel:
    spec: ModelSpec
    levels: tuple[float, ...]
    labels: list[str]
    pair_order: tuple[ODPair, ...]
    feature_cfg: FeatureConfig | None
    models: dict[ODPair | None, object]  # None key = pooled scope
    seasonal: dict[ODPair, qr.SeasonalStats] = field(default_factory=dict)

    def model_for(self, pair: ODPair):
        return self.models[None] if self.spec.scope == "pooled" else self.models[pair]


def working_series(
    dataset: ODDataset, split: SplitSpec, check_unit_root: bool = False
) -> dict[ODPair, HourlySeries]:
    """Differenced-and-masked series per pair (the model fitting scale)."""
    out = {}
    for pair in dataset.pairs:
        diffed = difference(dataset.series[pair])
        if check_unit_root:
            check_stationarity(diffed)
        out[pair] = mask_lags(diffed, split)
    return out


def _train_rows(
    histories: dict[ODPair, HourlySeries],
    pair: ODPair,
    split: SplitSpec,
    cfg: FeatureConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Feature matrix, targets, and timestamps for one pair's train lags."""
    series = histories[pair]
    in_train = split.in_train(series.timestamps)
    min_history = cfg.cross_order if cfg.cross_lags else cfg.ar_order
    rows, targets, stamps = [], [], []
    for i in np.flatnonzero(in_train):
        if i < min_history:
            continue
        t = series.timestamps[i]
        try:
            feats = build_features(histories, t, pair, cfg)
        except ValueError:
            continue  # a cross-pair series lacks history at this lag
        rows.append(feats.vector())
        targets.append(series.values[i])
        stamps.append(t)
    if not rows:
        raise ValueError(f"no usable training lags for pair {pair}")
    return np.array(rows), np.array(targets), np.array(stamps, dtype="datetime64[h]")


def train_model(
    dataset: ODDataset,
    split: SplitSpec,
    spec: ModelSpec,
    levels=qr.DEFAULT_QUANTILES,
) -> TrainedDemandModel:
    pair_order = tuple(dataset.pairs)
    labels = [loc.label for loc in dataset.locations]

    if spec.family == "hp":
        models = {}
        for pair in pair_order:
            raw = mask_lags(dataset.series[pair], split)
            keep = split.in_train(raw.timestamps)
            train = ODCountSeries(pair, raw.timestamps[keep], raw.counts[keep])
            models[pair] = qr.fit_hp(train, levels)
        return TrainedDemandModel(spec, tuple(levels), labels, pair_order, None, models)

    histories = working_series(dataset, split, check_unit_root=True)
    seasonal: dict[ODPair, qr.SeasonalStats] = {}
    if spec.seasonal_normalize:
        for pair in pair_order:
            series = histories[pair]
            keep = split.in_train(series.timestamps)
            train_part = HourlySeries(pair, series.timestamps[keep], series.values[keep])
            stats = qr.fit_seasonal_stats(train_part)
            seasonal[pair] = stats
            histories[pair] = qr.seasonal_normalize(series, stats)

    cfg = spec.feature_config(pair_order)
    models: dict[ODPair | None, object] = {}
    if spec.scope == "pooled":
        xs, ys = [], []
        for pair in pair_order:
            X, y, _ = _train_rows(histories, pair, split, cfg)
            xs.append(X)
            ys.append(y)
        X, y = np.vstack(xs), np.concatenate(ys)
        models[None] = _fit_family(spec, X, y, levels, cfg)
    else:
        for pair in pair_order:
            X, y, _ = _train_rows(histories, pair, split, cfg)
            models[pair] = _fit_family(spec, X, y, levels, cfg)
    return TrainedDemandModel(spec, tuple(levels), labels, pair_order, cfg, models, seasonal)


def _fit_family(spec: ModelSpec, X, y, levels, cfg):
    if spec.family == "linear":
        return qr.fit_lqr(X, y, levels, sort_quantiles=spec.sort_quantiles, feature_cfg=cfg)
    return boosting.fit_gboost(
        X, y, levels, spec.gboost, sort_quantiles=spec.sort_quantiles, feature_cfg=cfg
    )


def evaluation_lags(dataset: ODDataset, split: SplitSpec) -> np.ndarray:
    """Unmasked test-range lags present in the data (union over pairs)."""
    stamps = set()
    for pair in dataset.pairs:
        ts = dataset.series[pair].timestamps
        keep = split.in_test(ts) & ~split.mask_array(ts)
        stamps.update(ts[keep])
    return np.array(sorted(stamps), dtype="datetime64[h]")


def predict_at(
    model: TrainedDemandModel,
    dataset: ODDataset,
    histories: dict[ODPair, HourlySeries],
    pair: ODPair,
    t: np.datetime64,
) -> qr.QuantileForecast:
    """One-step-ahead count-scale forecast for one pair at lag t."""
    if model.spec.family == "hp":
        return qr.predict_hp(model.models[pair], t)

    raw = dataset.series[pair]
    prev_idx = np.searchsorted(raw.timestamps, t - HOUR)
    if prev_idx >= len(raw) or raw.timestamps[prev_idx] != t - HOUR:
        raise ValueError(f"no observed count at {format_hour(t - HOUR)} to un-difference from")
    prev_count = float(raw.counts[prev_idx])

    feats = build_features(histories, t, pair, model.feature_cfg).vector()
    scale = model.seasonal[pair].scale_at(t) if model.spec.seasonal_normalize else None
    inner = model.model_for(pair)
    if model.spec.family == "linear":
        values = qr.predict_lqr(inner, feats, prev_count, scale)
    else:
        values = boosting.predict_gboost(inner, feats, prev_count, scale)
    return qr.QuantileForecast(pair, np.datetime64(t, "h"), values)


def predict_forecasts(
    model: TrainedDemandModel,
    dataset: ODDataset,
    split: SplitSpec,
    lags: np.ndarray | None = None,
) -> dict[np.datetime64, dict[ODPair, qr.QuantileForecast]]:
    if lags is None:
        lags = evaluation_lags(dataset, split)
    histories = None
    if model.spec.family != "hp":
        histories = working_series(dataset, split)
        if model.spec.seasonal_normalize:
            histories = {
                p: qr.seasonal_normalize(s, model.seasonal[p]) for p, s in histories.items()
            }
    out: dict[np.datetime64, dict[ODPair, qr.QuantileForecast]] = {}
    for t in lags:
        out[np.datetime64(t, "h")] = {
            pair: predict_at(model, dataset, histories, pair, t) for pair in model.pair_order
        }
    return out


# ---------------------------------------------------------------------------
# Hyperparameter tuning split and search
# ---------------------------------------------------------------------------


def tuning_ranges(split: SplitSpec) -> tuple[tuple[date, date], tuple[date, date], tuple[date, date]]:
    """Carve the train range into tuning (test, val, train) date ranges.

    The first week of the train range scores candidates, the second week
    drives early stopping, and the remainder is the tuning train set.
    """
    start, end = split.train_range
    t_end = start + timedelta(days=6)
    v_end = start + timedelta(days=13)
    if v_end >= end:
        raise ValueError("train range too short to carve two tuning weeks")
    return (start, t_end), (t_end + timedelta(days=1), v_end), (v_end + timedelta(days=1), end)


def gboost_grid_search(
    dataset: ODDataset,
    split: SplitSpec,
    spec: ModelSpec,
    grid: list[boosting.GBoostHyper],
    levels=qr.DEFAULT_QUANTILES,
    patience: int = 10,
) -> tuple[boosting.GBoostHyper, list[float]]:
    """Pick boosting hyperparameters by total tuning-test MTL, ties first-wins."""
    (test_a, test_b), (val_a, val_b), (train_a, train_b) = tuning_ranges(split)
    histories = working_series(dataset, split)
    cfg = spec.feature_config(tuple(dataset.pairs))

    def in_range(ts, rng):
        days = ts.astype("datetime64[D]")
        return (days >= np.datetime64(rng[0])) & (days <= np.datetime64(rng[1]))

    per_pair = {}
    for pair in dataset.pairs:
        X, y, stamps = _train_rows(histories, pair, split, cfg)
        sel_train = in_range(stamps, (train_a, train_b))
        sel_val = in_range(stamps, (val_a, val_b))
        sel_test = in_range(stamps, (test_a, test_b))
        per_pair[pair] = (X[sel_train], y[sel_train], X[sel_val], y[sel_val], X[sel_test], y[sel_test])

    def pair_score(model, Xs, ys) -> float:
        raw = boosting.gboost_raw_predict(model, Xs)
        return sum(float(np.mean(qr.tilted_loss(q, ys, raw[q]))) for q in levels)

    if spec.scope == "pooled":
        Xt = np.vstack([per_pair[p][0] for p in dataset.pairs])
        yt = np.concatenate([per_pair[p][1] for p in dataset.pairs])
        Xv = np.vstack([per_pair[p][2] for p in dataset.pairs])
        yv = np.concatenate([per_pair[p][3] for p in dataset.pairs])

        def score(hyper: boosting.GBoostHyper) -> float:
            model = boosting.fit_gboost(Xt, yt, levels, hyper, val=(Xv, yv), patience=patience)
            return sum(pair_score(model, per_pair[p][4], per_pair[p][5]) for p in dataset.pairs)

    else:

        def score(hyper: boosting.GBoostHyper) -> float:
            total = 0.0
            for pair in dataset.pairs:
                Xt, yt, Xv, yv, Xs, ys = per_pair[pair]
                model = boosting.fit_gboost(Xt, yt, levels, hyper, val=(Xv, yv), patience=patience)
                total += pair_score(model, Xs, ys)
            return total

    return qr.grid_search(score, grid)


# ---------------------------------------------------------------------------
# Model serialization (versioned JSON)
# ---------------------------------------------------------------------------


def _pair_doc(pair: ODPair, labels) -> list[str]:
    return [labels[pair.origin], labels[pair.destination]]


def _spec_doc(spec: ModelSpec) -> dict:
    return {
        "family": spec.family,
        "scope": spec.scope,
        "sort_quantiles": spec.sort_quantiles,
        "exam_period": [d.isoformat() for d in spec.exam_period] if spec.exam_period else None,
        "seasonal_normalize": spec.seasonal_normalize,
        "cross_lags": spec.cross_lags,
        "cross_order": spec.cross_order,
        "ar_order": spec.ar_order,
        "gboost": {
            "learning_rate": spec.gboost.learning_rate,
            "max_depth": spec.gboost.max_depth,
            "n_trees": spec.gboost.n_trees,
        },
    }


def _spec_from_doc(doc: dict) -> ModelSpec:
    exam = doc.get("exam_period")
    return ModelSpec(
        family=doc["family"],
        scope=doc["scope"],
        sort_quantiles=bool(doc["sort_quantiles"]),
        exam_period=tuple(date.fromisoformat(d) for d in exam) if exam else None,
        seasonal_normalize=bool(doc.get("seasonal_normalize", False)),
        cross_lags=bool(doc.get("cross_lags", False)),
        cross_order=int(doc.get("cross_order", 1)),
        ar_order=int(doc.get("ar_order", 24)),
        gboost=boosting.GBoostHyper(**doc.get("gboost", {})),
    )


def _tree_doc(node: boosting.TreeNode) -> dict:
    if node.is_leaf():
        return {"value": node.value}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _tree_doc(node.left),
        "right": _tree_doc(node.right),
    }


def _tree_from_doc(doc: dict) -> boosting.TreeNode:
    if "value" in doc:
        return boosting.TreeNode(value=float(doc["value"]))
    return boosting.TreeNode(
        feature=int(doc["feature"]),
        threshold=float(doc["threshold"]),
        left=_tree_from_doc(doc["left"]),
        right=_tree_from_doc(doc["right"]),
    )


def _inner_doc(family: str, model) -> dict:
    if family == "hp":
        return {
            "buckets": [
                {
                    "dow": key[0],
                    "tod": key[1],
                    "timestamps": [format_hour(t) for t in ts],
                    "counts": values.tolist(),
                }
                for key, (ts, values) in sorted(model.buckets.items())
            ]
        }
    if family == "linear":
        return {
            "coef": {str(q): model.coef[q].tolist() for q in model.levels},
            "converged": {str(q): model.converged.get(q, True) for q in model.levels},
        }
    return {
        "init": {str(q): model.init[q] for q in model.levels},
        "trees": {str(q): [_tree_doc(t) for t in model.trees[q]] for q in model.levels},
    }


def _inner_from_doc(family: str, doc: dict, pair, levels, spec: ModelSpec, cfg):
    if family == "hp":
        buckets = {
            (b["dow"], b["tod"]): (
                np.array([parse_hour(t) for t in b["timestamps"]], dtype="datetime64[h]"),
                np.array(b["counts"], dtype=np.float64),
            )
            for b in doc["buckets"]
        }
        return qr.HPModel(pair, levels, buckets)
    if family == "linear":
        coef = {float(q): np.array(v) for q, v in doc["coef"].items()}
        converged = {float(q): bool(v) for q, v in doc["converged"].items()}
        return qr.LinearQRModel(levels, coef, spec.sort_quantiles, converged, cfg)
    init = {float(q): float(v) for q, v in doc["init"].items()}
    trees = {float(q): [_tree_from_doc(t) for t in ts] for q, ts in doc["trees"].items()}
    return boosting.GBoostQRModel(levels, spec.gboost, init, trees, spec.sort_quantiles, cfg)


def model_to_json_dict(model: TrainedDemandModel) -> dict:
    doc = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "spec": _spec_doc(model.spec),
        "levels": list(model.levels),
        "labels": model.labels,
        "pairs": [_pair_doc(p, model.labels) for p in model.pair_order],
        "models": {},
        "seasonal": {},
    }
    for key, inner in model.models.items():
        name = "pooled" if key is None else ">".join(_pair_doc(key, model.labels))
        doc["models"][name] = _inner_doc(model.spec.family, inner)
    for pair, stats in model.seasonal.items():
        doc["seasonal"][">".join(_pair_doc(pair, model.labels))] = {
            "cells": [
                {"dow": k[0], "tod": k[1], "mean": stats.mean[k], "std": stats.std[k]}
                for k in sorted(stats.mean)
            ]
        }
    return doc


def model_from_json_dict(doc: dict) -> TrainedDemandModel:
    if doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema version {doc.get('schema_version')}")
    spec = _spec_from_doc(doc["spec"])
    labels = list(doc["labels"])
    index = {lab: i for i, lab in enumerate(labels)}
    levels = tuple(float(q) for q in doc["levels"])
    pair_order = tuple(ODPair(index[o], index[d]) for o, d in doc["pairs"])
    cfg = spec.feature_config(pair_order) if spec.family != "hp" else None

    models: dict[ODPair | None, object] = {}
    for name, inner_doc in doc["models"].items():
        if name == "pooled":
            key = None
            pair = None
        else:
            o, d = name.split(">")
            key = ODPair(index[o], index[d])
            pair = key
        models[key] = _inner_from_doc(spec.family, inner_doc, pair, levels, spec, cfg)

    seasonal = {}
    for name, sdoc in doc.get("seasonal", {}).items():
        o, d = name.split(">")
        mean = {(c["dow"], c["tod"]): float(c["mean"]) for c in sdoc["cells"]}
        std = {(c["dow"], c["tod"]): float(c["std"]) for c in sdoc["cells"]}
        seasonal[ODPair(index[o], index[d])] = qr.SeasonalStats(mean, std)
    return TrainedDemandModel(spec, levels, labels, pair_order, cfg, models, seasonal)


def save_model(model: TrainedDemandModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json_dict(model), fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> TrainedDemandModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_json_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Forecast CSV export
# ---------------------------------------------------------------------------


def forecasts_to_csv(forecasts, labels, path) -> None:
    """Rows of `timestamp, origin, destination, q, value`, sorted."""
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["timestamp", "origin", "destination", "q", "value"])
        for t in sorted(forecasts):
            for pair in sorted(forecasts[t]):
                fc = forecasts[t][pair]
                for q in fc.levels():
                    writer.writerow(
                        [
                            format_hour(t),
                            labels[pair.origin],
                            labels[pair.destination],
                            f"{q:g}",
                            f"{fc.values[q]:.10g}",
                        ]
                    )


def forecasts_from_csv(path) -> tuple[list[str], dict]:
    import csv as _csv

    cells: dict[tuple[np.datetime64, str, str], dict[float, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        if header != ["timestamp", "origin", "destination", "q", "value"]:
            raise ValueError(f"{path}: unexpected forecast CSV header")
        for row in reader:
            if not row:
                continue
            t, o, d, q, v = row
            cells.setdefault((parse_hour(t), o, d), {})[float(q)] = float(v)
    labels = sorted({o for _, o, _ in cells} | {d for _, _, d in cells})
    index = {lab: i for i, lab in enumerate(labels)}
    out: dict[np.datetime64, dict[ODPair, qr.QuantileForecast]] = {}
    for (t, o, d), values in cells.items():
        pair = ODPair(index[o], index[d])
        out.setdefault(t, {})[pair] = qr.QuantileForecast(pair, t, values)
    return labels, out
