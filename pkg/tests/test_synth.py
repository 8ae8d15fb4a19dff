import numpy as np
import pytest
from datetime import date

from drtopt.copula import fit_correlation
from drtopt.synth import (
    SyntheticSpec,
    generate_synthetic,
    network_for,
    seasonal_residuals,
)

FLAT = dict(tod_profile=(1.0,) * 24, dow_profile=(1.0,) * 7, exam_period=None)


def flat_spec(**kw):
    base = dict(n_locations=3, start=date(2017, 11, 1), end=date(2018, 1, 23), base_scale=50.0, dispersion=8.0)
    base.update(FLAT)
    base.update(kw)
    return SyntheticSpec(**base)


def test_spec_validation():
    with pytest.raises(ValueError, match="rho"):
        SyntheticSpec(rho=1.0)
    with pytest.raises(ValueError, match="locations"):
        SyntheticSpec(n_locations=1)
    with pytest.raises(ValueError, match="profiles"):
        SyntheticSpec(tod_profile=(1.0,) * 10)


def test_deterministic_per_seed():
    a = generate_synthetic(SyntheticSpec(n_locations=2, end=date(2017, 11, 24), seed=5))
    b = generate_synthetic(SyntheticSpec(n_locations=2, end=date(2017, 11, 24), seed=5))
    c = generate_synthetic(SyntheticSpec(n_locations=2, end=date(2017, 11, 24), seed=6))
    pair = a.pairs[0]
    assert np.array_equal(a.series[pair].counts, b.series[pair].counts)
    assert not np.array_equal(a.series[pair].counts, c.series[pair].counts)


def test_zero_dispersion_gives_rounded_means():
    spec = SyntheticSpec(n_locations=2, end=date(2017, 11, 30), dispersion=0.0, seed=1)
    ds = generate_synthetic(spec)
    again = generate_synthetic(spec)
    pair = ds.pairs[0]
    counts = ds.series[pair].counts
    assert np.array_equal(counts, again.series[pair].counts)
    # seasonal structure survives exactly: every Monday 08:00 has the same count
    ts = ds.series[pair].timestamps
    hours = ts.astype("int64") % 24
    dows = (ts.astype("int64") // 24 + 3) % 7
    exam_days = (ts.astype("datetime64[D]") >= np.datetime64("2017-12-08"))
    sel = (hours == 8) & (dows == 0) & ~exam_days
    assert len(set(counts[sel])) == 1


def test_zero_rho_residuals_uncorrelated():
    ds = generate_synthetic(flat_spec(rho=0.0, seed=2))
    resid = seasonal_residuals(ds)
    n = resid.shape[0]
    assert n >= 2000
    corr = np.corrcoef(resid, rowvar=False)
    off = corr[~np.eye(corr.shape[0], dtype=bool)]
    assert np.max(np.abs(off)) <= 0.1


@pytest.mark.parametrize("rho", [0.0, 0.5, 0.9])
def test_fit_correlation_recovers_rho(rho):
    ds = generate_synthetic(flat_spec(rho=rho, seed=3))
    history = {p: ds.series[p].counts[:2000].astype(float) for p in ds.pairs}
    model = fit_correlation(history)
    off = model.corr[~np.eye(model.dim, dtype=bool)]
    assert np.max(np.abs(off - rho)) <= 0.1


def test_counts_nonnegative_and_hourly():
    ds = generate_synthetic(SyntheticSpec(n_locations=3, end=date(2017, 11, 24), seed=8))
    for pair in ds.pairs:
        s = ds.series[pair]
        assert np.all(s.counts >= 0)
        assert np.all(np.diff(s.timestamps) == np.timedelta64(1, "h"))
        assert len(s) == 8 * 24


def test_exam_period_raises_demand():
    spec = SyntheticSpec(n_locations=2, end=date(2018, 1, 14), dispersion=0.0, exam_multiplier=2.0, seed=4)
    ds = generate_synthetic(spec)
    pair = ds.pairs[0]
    s = ds.series[pair]
    days = s.timestamps.astype("datetime64[D]")
    hours = s.timestamps.astype("int64") % 24
    dows = (s.timestamps.astype("int64") // 24 + 3) % 7
    sel = (hours == 8) & (dows == 0)
    inside = sel & (days >= np.datetime64("2017-12-08")) & (days <= np.datetime64("2017-12-22"))
    outside = sel & ~((days >= np.datetime64("2017-12-08")) & (days <= np.datetime64("2017-12-22")))
    assert s.counts[inside].mean() > 1.5 * s.counts[outside].mean()


def test_network_alignment():
    spec = SyntheticSpec(n_locations=4, end=date(2017, 11, 24), seed=0)
    ds = generate_synthetic(spec)
    inst = network_for(spec, ds)
    assert [n.label for n in inst.demand_nodes] == [l.label for l in ds.locations]
    assert inst.ride_time.shape == (4, 4)
    assert np.all(inst.ride_time > 0)
    assert inst.max_routes <= inst.fleet_size
