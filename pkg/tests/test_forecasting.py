import numpy as np
import pytest
from datetime import date

from drtopt import forecasting
from drtopt.boosting import GBoostHyper
from drtopt.data import SplitSpec
from drtopt.forecasting import (
    ModelSpec,
    gboost_grid_search,
    load_model,
    model_from_json_dict,
    model_to_json_dict,
    predict_forecasts,
    save_model,
    evaluation_lags,
    train_model,
    tuning_ranges,
    working_series,
)
from drtopt.metrics import crossings
from drtopt.qr import DEFAULT_QUANTILES
from drtopt.synth import SyntheticSpec, generate_synthetic

SPLIT = SplitSpec((date(2017, 11, 17), date(2017, 12, 12)), (date(2017, 12, 13), date(2017, 12, 20)))


@pytest.fixture(scope="module")
def dataset():
    return generate_synthetic(SyntheticSpec(n_locations=3, end=date(2017, 12, 20), seed=3))


def spec(**kw):
    kw.setdefault("exam_period", None)
    return ModelSpec(**kw)


def test_model_spec_validation():
    with pytest.raises(ValueError, match="family"):
        ModelSpec(family="nope")
    with pytest.raises(ValueError, match="scope"):
        ModelSpec(scope="nope")
    with pytest.raises(ValueError, match="exclusive"):
        ModelSpec(cross_lags=True, scope="pooled")


def test_working_series_is_masked_and_differenced(dataset):
    hist = working_series(dataset, SPLIT)
    s = hist[dataset.pairs[0]]
    hours = s.timestamps.astype("int64") % 24
    assert set(hours) <= set(range(7, 23))
    raw = dataset.series[dataset.pairs[0]]
    # a retained 08:00 value equals the 08:00-07:00 raw difference
    t = s.timestamps[5]
    i = int(np.searchsorted(raw.timestamps, t))
    assert s.values[5] == raw.counts[i] - raw.counts[i - 1]


def test_evaluation_lags_cover_test_week(dataset):
    lags = evaluation_lags(dataset, SPLIT)
    assert len(lags) == 8 * 16  # 8 test days x 16 unmasked hours
    days = np.unique(lags.astype("datetime64[D]"))
    assert str(days[0]) == "2017-12-13" and str(days[-1]) == "2017-12-20"


@pytest.mark.parametrize("family", ["hp", "linear"])
def test_train_predict_shapes(dataset, family):
    model = train_model(dataset, SPLIT, spec(family=family), DEFAULT_QUANTILES)
    lags = evaluation_lags(dataset, SPLIT)[:4]
    forecasts = predict_forecasts(model, dataset, SPLIT, lags)
    assert set(forecasts) == set(lags)
    for per_pair in forecasts.values():
        assert set(per_pair) == set(dataset.pairs)
        for fc in per_pair.values():
            vals = [fc.values[q] for q in DEFAULT_QUANTILES]
            assert all(v >= 0 for v in vals)
            assert vals == sorted(vals)


def test_gboost_train_predict(dataset):
    mspec = spec(family="gboost", gboost=GBoostHyper(0.3, 2, 10))
    model = train_model(dataset, SPLIT, mspec, (0.25, 0.75))
    lags = evaluation_lags(dataset, SPLIT)[:2]
    forecasts = predict_forecasts(model, dataset, SPLIT, lags)
    assert all(len(per_pair) == 6 for per_pair in forecasts.values())


def test_pooled_scope_trains_single_model(dataset):
    model = train_model(dataset, SPLIT, spec(scope="pooled"), (0.5,))
    assert set(model.models) == {None}
    lags = evaluation_lags(dataset, SPLIT)[:2]
    forecasts = predict_forecasts(model, dataset, SPLIT, lags)
    assert len(forecasts[lags[0]]) == 6


def test_cross_lag_model_trains(dataset):
    model = train_model(dataset, SPLIT, spec(cross_lags=True, cross_order=1), (0.5,))
    lags = evaluation_lags(dataset, SPLIT)[:2]
    forecasts = predict_forecasts(model, dataset, SPLIT, lags)
    assert len(forecasts[lags[0]]) == 6


def test_seasonal_variant_round_trips(dataset):
    model = train_model(dataset, SPLIT, spec(seasonal_normalize=True), (0.25, 0.75))
    assert set(model.seasonal) == set(dataset.pairs)
    lags = evaluation_lags(dataset, SPLIT)[:2]
    forecasts = predict_forecasts(model, dataset, SPLIT, lags)
    for per_pair in forecasts.values():
        for fc in per_pair.values():
            assert all(v >= 0 for v in fc.values.values())


def test_sorted_forecasts_never_cross(dataset):
    model = train_model(dataset, SPLIT, spec(), DEFAULT_QUANTILES)
    lags = evaluation_lags(dataset, SPLIT)
    forecasts = predict_forecasts(model, dataset, SPLIT, lags)
    for pair in dataset.pairs:
        series = [forecasts[np.datetime64(t, "h")][pair] for t in lags]
        assert crossings(series, DEFAULT_QUANTILES) == 0


def test_exam_flag_requires_period(dataset):
    mspec = ModelSpec(exam_period=(date(2017, 11, 20), date(2017, 11, 24)))
    model = train_model(dataset, SPLIT, mspec, (0.5,))
    assert model.feature_cfg.exam_period is not None
    n_feats = model.feature_cfg.n_features(len(dataset.pairs))
    assert len(model.models[dataset.pairs[0]].coef[0.5]) == n_feats == 16 + 7 + 1 + 24


def test_determinism_same_data_same_model(dataset):
    a = train_model(dataset, SPLIT, spec(), (0.5,))
    b = train_model(dataset, SPLIT, spec(), (0.5,))
    for pair in dataset.pairs:
        assert np.array_equal(a.models[pair].coef[0.5], b.models[pair].coef[0.5])


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("family", ["hp", "linear", "gboost"])
def test_model_json_round_trip(dataset, family, tmp_path):
    mspec = spec(family=family, gboost=GBoostHyper(0.3, 2, 8))
    model = train_model(dataset, SPLIT, mspec, (0.25, 0.75))
    path = tmp_path / "model.json"
    save_model(model, path)
    back = load_model(path)
    lags = evaluation_lags(dataset, SPLIT)[:3]
    original = predict_forecasts(model, dataset, SPLIT, lags)
    restored = predict_forecasts(back, dataset, SPLIT, lags)
    for t in lags:
        t = np.datetime64(t, "h")
        for pair in dataset.pairs:
            assert original[t][pair].values == restored[t][pair].values


def test_model_json_is_stable_bytes(dataset, tmp_path):
    model = train_model(dataset, SPLIT, spec(), (0.5,))
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_model(model, p1)
    save_model(model, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_model_schema_version_checked(dataset):
    model = train_model(dataset, SPLIT, spec(), (0.5,))
    doc = model_to_json_dict(model)
    doc["schema_version"] = 99
    with pytest.raises(ValueError, match="schema"):
        model_from_json_dict(doc)


# ---------------------------------------------------------------------------
# tuning
# ---------------------------------------------------------------------------


def test_tuning_ranges_partition():
    (ta, tb), (va, vb), (ra, rb) = tuning_ranges(SPLIT)
    assert ta == date(2017, 11, 17) and tb == date(2017, 11, 23)
    assert va == date(2017, 11, 24) and vb == date(2017, 11, 30)
    assert ra == date(2017, 12, 1) and rb == date(2017, 12, 12)


def test_tuning_ranges_too_short():
    short = SplitSpec((date(2017, 11, 17), date(2017, 11, 29)), (date(2017, 12, 1), date(2017, 12, 2)))
    with pytest.raises(ValueError, match="too short"):
        tuning_ranges(short)


def test_gboost_grid_search_picks_sane_rate(dataset):
    grid = [
        GBoostHyper(0.3, 2, 12),
        GBoostHyper(1e-8, 2, 12),  # effectively never moves off the initial constant
    ]
    best, scores = gboost_grid_search(dataset, SPLIT, spec(family="gboost"), grid, (0.5,))
    assert best == grid[0]
    assert scores[0] < scores[1]


def test_grid_search_tie_breaks_first(dataset):
    grid = [GBoostHyper(0.0, 1, 5), GBoostHyper(0.0, 2, 5)]  # both inert
    best, scores = gboost_grid_search(dataset, SPLIT, spec(family="gboost"), grid, (0.5,))
    assert best == grid[0]
    assert scores[0] == scores[1]


def test_grid_search_pooled_scope(dataset):
    grid = [GBoostHyper(0.3, 2, 10), GBoostHyper(1e-8, 2, 10)]
    mspec = spec(family="gboost", scope="pooled")
    best, scores = gboost_grid_search(dataset, SPLIT, mspec, grid, (0.5,))
    assert best == grid[0]
    assert scores[0] < scores[1]


def test_cross_order_two_dimensions(dataset):
    model = train_model(dataset, SPLIT, spec(cross_lags=True, cross_order=2), (0.5,))
    n_feats = model.feature_cfg.n_features(len(dataset.pairs))
    assert n_feats == 16 + 7 + 2 * 6  # two lags of every pair
    assert len(model.models[dataset.pairs[0]].coef[0.5]) == n_feats


# ---------------------------------------------------------------------------
# forecast CSV
# ---------------------------------------------------------------------------


def test_forecast_csv_round_trip(dataset, tmp_path):
    model = train_model(dataset, SPLIT, spec(), (0.25, 0.75))
    lags = evaluation_lags(dataset, SPLIT)[:3]
    forecasts = predict_forecasts(model, dataset, SPLIT, lags)
    path = tmp_path / "fc.csv"
    forecasting.forecasts_to_csv(forecasts, model.labels, path)
    labels, back = forecasting.forecasts_from_csv(path)
    assert labels == model.labels
    for t in forecasts:
        for pair in forecasts[t]:
            assert back[t][pair].values == pytest.approx(forecasts[t][pair].values)
