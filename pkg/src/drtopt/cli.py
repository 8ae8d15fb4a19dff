"""Command-line shell: synth, train, predict, evaluate, optimize, pipeline.

Logs go to stderr; data artifacts go to files under the configured output
directory.  All randomness flows from the configured seed, so reruns are
byte-identical.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from datetime import date
from pathlib import Path

import numpy as np

from . import __version__, config as config_mod, forecasting, metrics, pipeline, synth
from .config import CONFIG_SCHEMA_VERSION, PipelineConfig, load_config
from .copula import export_correlation, export_samples, fit_correlation, sample_joint
from .data import ODPair, format_hour, load_od_counts, parse_hour, save_od_counts
from .forecasting import MODEL_SCHEMA_VERSION
from .tndfs import INSTANCE_SCHEMA_VERSION, load_instance, save_instance

log = logging.getLogger("drtopt")


def _write_json(doc: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _version_text() -> str:
    return (
        f"drtopt {__version__} "
        f"(config schema {CONFIG_SCHEMA_VERSION}, model schema {MODEL_SCHEMA_VERSION}, "
        f"network schema {INSTANCE_SCHEMA_VERSION})"
    )


# ---------------------------------------------------------------------------
# Shared pipeline plumbing
# ---------------------------------------------------------------------------


def _load_everything(cfg: PipelineConfig):
    dataset = load_od_counts(cfg.counts_csv)
    return dataset


def _fit_copula(cfg: PipelineConfig, dataset):
    history = {}
    for pair in dataset.pairs:
        s = dataset.series[pair]
        keep = cfg.split.in_train(s.timestamps) & ~cfg.split.mask_array(s.timestamps)
        history[pair] = s.counts[keep].astype(float)
    return fit_correlation(history, cfg.copula_min_lags)


def _instance_pair_map(dataset, instance):
    """Map instance demand-node OD pairs onto dataset pairs via labels."""
    by_label = {loc.label: loc.id for loc in dataset.locations}
    mapping = {}
    for node_o in instance.demand_nodes:
        for node_d in instance.demand_nodes:
            if node_o.id == node_d.id:
                continue
            if node_o.label in by_label and node_d.label in by_label:
                data_pair = ODPair(by_label[node_o.label], by_label[node_d.label])
                mapping[data_pair] = ODPair(node_o.id, node_d.id)
    if not mapping:
        raise ValueError("no demand-node labels in the network match the data locations")
    return mapping


def _rekey_forecasts(forecasts_by_lag, mapping):
    out = {}
    for lag, per_pair in forecasts_by_lag.items():
        out[lag] = {
            mapping[p]: fc for p, fc in per_pair.items() if p in mapping
        }
    return out


def _optimization_lags(cfg: PipelineConfig, dataset) -> np.ndarray:
    if cfg.lags:
        return np.array(sorted(parse_hour(t) for t in cfg.lags), dtype="datetime64[h]")
    return forecasting.evaluation_lags(dataset, cfg.split)


def _truths_at(dataset, lags, mapping):
    truths = {}
    for lag in lags:
        per = {}
        for data_pair, inst_pair in mapping.items():
            s = dataset.series[data_pair]
            idx = np.searchsorted(s.timestamps, lag)
            if idx >= len(s) or s.timestamps[idx] != lag:
                raise ValueError(f"no observation for {data_pair} at {format_hour(lag)}")
            per[inst_pair] = float(s.counts[idx])
        truths[np.datetime64(lag, "h")] = per
    return truths


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    profile_kwargs = {}
    if args.flat_profile:
        profile_kwargs["tod_profile"] = (1.0,) * 24
        profile_kwargs["dow_profile"] = (1.0,) * 7
        profile_kwargs["exam_period"] = None
    spec = synth.SyntheticSpec(
        n_locations=args.locations,
        start=date.fromisoformat(args.start),
        end=date.fromisoformat(args.end),
        rho=args.rho,
        dispersion=args.dispersion,
        base_scale=args.scale,
        seed=args.seed,
        **profile_kwargs,
    )
    dataset = synth.generate_synthetic(spec)
    save_od_counts(out_dir / "counts.csv", dataset)
    instance = synth.network_for(spec, dataset)
    save_instance(instance, out_dir / "network.json")
    _write_json(config_mod.default_config_doc("counts.csv", "network.json", args.seed), out_dir / "config.json")
    log.info("wrote %s, %s, %s", out_dir / "counts.csv", out_dir / "network.json", out_dir / "config.json")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    dataset = _load_everything(cfg)
    spec = cfg.model
    if cfg.gboost_grid:
        best, scores = forecasting.gboost_grid_search(
            dataset, cfg.split, spec, list(cfg.gboost_grid), cfg.quantiles
        )
        log.info(
            "grid search over %d points: chose lr=%g depth=%d trees=%d (loss %.3f)",
            len(scores), best.learning_rate, best.max_depth, best.n_trees, min(scores),
        )
        spec = replace(spec, gboost=best)
    model = forecasting.train_model(dataset, cfg.split, spec, cfg.quantiles)
    out = Path(args.model_out) if args.model_out else cfg.output_dir / "model.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    forecasting.save_model(model, out)
    log.info("trained %s/%s model -> %s", spec.family, spec.scope, out)
    return 0


def cmd_predict(args) -> int:
    cfg = load_config(args.config)
    dataset = _load_everything(cfg)
    model = forecasting.load_model(args.model)
    lags = _optimization_lags(cfg, dataset)
    forecasts = forecasting.predict_forecasts(model, dataset, cfg.split, lags)
    out = Path(args.out) if args.out else cfg.output_dir / "forecasts.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    forecasting.forecasts_to_csv(forecasts, model.labels, out)
    log.info("wrote %d lags of forecasts -> %s", len(forecasts), out)
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    dataset = _load_everything(cfg)
    model = forecasting.load_model(args.model)
    lags = forecasting.evaluation_lags(dataset, cfg.split)
    forecasts = forecasting.predict_forecasts(model, dataset, cfg.split, lags)

    by_pair: dict[ODPair, list] = {p: [] for p in model.pair_order}
    truths: dict[ODPair, list] = {p: [] for p in model.pair_order}
    for lag in lags:
        for pair in model.pair_order:
            by_pair[pair].append(forecasts[np.datetime64(lag, "h")][pair])
            s = dataset.series[pair]
            idx = np.searchsorted(s.timestamps, lag)
            if idx >= len(s) or s.timestamps[idx] != lag:
                raise ValueError(f"no observation for pair {pair} at {format_hour(lag)}")
            truths[pair].append(float(s.counts[idx]))
    report = metrics.evaluate(by_pair, {p: np.array(v) for p, v in truths.items()}, cfg.quantiles)
    out = Path(args.out) if args.out else cfg.output_dir / "evaluation.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics.report_csv(report, out, model.labels)
    print(metrics.report_table(report, name=f"{cfg.model.family}/{cfg.model.scope}"))
    return 0


def cmd_optimize(args) -> int:
    cfg = load_config(args.config)
    if cfg.network is None:
        raise ValueError("config.network: required for optimization")
    threads = args.threads or cfg.threads
    dataset = _load_everything(cfg)
    model = forecasting.load_model(args.model)
    instance = load_instance(cfg.network)
    mapping = _instance_pair_map(dataset, instance)
    lags = _optimization_lags(cfg, dataset)

    copula_model = _fit_copula_mapped(cfg, dataset, mapping)
    forecasts = _rekey_forecasts(
        forecasting.predict_forecasts(model, dataset, cfg.split, lags), mapping
    )
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    export_correlation(copula_model, cfg.output_dir / "correlation.csv")
    for i, lag in enumerate(lags):
        seed = int(np.random.SeedSequence(cfg.seed, spawn_key=(i, 0)).generate_state(1)[0])
        result = pipeline.optimize_lag(
            copula_model, forecasts[np.datetime64(lag, "h")], instance, cfg.k, seed, threads
        )
        if args.dump_samples:
            samples = sample_joint(copula_model, forecasts[np.datetime64(lag, "h")], cfg.k, seed)
            export_samples(samples, copula_model.pair_order, cfg.output_dir / f"samples_{format_hour(lag)}.csv")
        _write_json(pipeline.scenario_to_json_dict(result), cfg.output_dir / f"scenario_{format_hour(lag)}.json")
        log.info(
            "%s: chose %s (%d/%d samples, mean savings %.2f min)",
            format_hour(lag),
            result.chosen.itinerary(),
            result.histogram[result.chosen_key],
            cfg.k,
            result.mean_time_savings,
        )
    return 0


def _fit_copula_mapped(cfg, dataset, mapping):
    history = {}
    for data_pair, inst_pair in sorted(mapping.items()):
        s = dataset.series[data_pair]
        keep = cfg.split.in_train(s.timestamps) & ~cfg.split.mask_array(s.timestamps)
        history[inst_pair] = s.counts[keep].astype(float)
    return fit_correlation(history, cfg.copula_min_lags)


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config)
    if cfg.network is None:
        raise ValueError("config.network: required for the comparison pipeline")
    dataset = _load_everything(cfg)
    instance = load_instance(cfg.network)
    mapping = _instance_pair_map(dataset, instance)
    lags = _optimization_lags(cfg, dataset)
    copula_model = _fit_copula_mapped(cfg, dataset, mapping)

    model_forecasts = {}
    for path in args.model:
        model = forecasting.load_model(path)
        name = f"{model.spec.family}/{model.spec.scope}"
        if name in model_forecasts:
            name = f"{name}#{len(model_forecasts)}"
        model_forecasts[name] = _rekey_forecasts(
            forecasting.predict_forecasts(model, dataset, cfg.split, lags), mapping
        )

    truths = _truths_at(dataset, lags, mapping)
    rows = pipeline.compare_strategies(
        lags, model_forecasts, truths, instance, copula_model, cfg.k, cfg.seed,
        args.threads or cfg.threads,
    )
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    pipeline.comparison_to_csv(rows, cfg.output_dir / "comparison.csv")
    table = pipeline.comparison_table(rows)
    (cfg.output_dir / "comparison.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drtopt",
        description="Demand forecasting and route/frequency optimization for responsive transit",
    )
    parser.add_argument("--version", action="version", version=_version_text())
    parser.add_argument("--log-level", default="INFO", help="stderr logging level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset, network, and config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--locations", type=int, default=4)
    p.add_argument("--start", default="2017-11-17")
    p.add_argument("--end", default="2018-01-14")
    p.add_argument("--rho", type=float, default=0.4)
    p.add_argument("--dispersion", type=float, default=4.0)
    p.add_argument("--scale", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--flat-profile", action="store_true", help="constant intensity (for calibration checks)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit the configured demand model")
    p.add_argument("--config", required=True)
    p.add_argument("--model-out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="emit forecast CSV for the optimization lags")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a trained model on the test range")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("optimize", help="scenario-optimize each configured lag")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--threads", type=int, help="cap worker parallelism (overrides config)")
    p.add_argument("--dump-samples", action="store_true", help="write per-lag sample CSVs for audit")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("pipeline", help="full comparison: sampling vs point estimates vs ground truth")
    p.add_argument("--config", required=True)
    p.add_argument("--model", action="append", required=True, help="trained model JSON (repeatable)")
    p.add_argument("--threads", type=int, help="cap worker parallelism (overrides config)")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
