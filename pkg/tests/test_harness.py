import math

import numpy as np
import pytest

from polarlab import geom, harness as hs, rearrange as ra
from polarlab.harness import ExperimentConfig


def test_fstar_input_gives_zero():
    # snapped 1-D poles map cells onto cells, so f* is fixed exactly
    cfg = hs.fixture_config("interval-d1", m=64, n_max=30, trials=200)
    f = ra.schwarz(hs.build_fixture("interval-d1", cfg))
    rep = hs.estimate_zn(f, cfg)
    assert np.all(rep.z == 0) and np.all(rep.stderr == 0)


def test_fstar_input_d2_within_grid_band():
    # generic mirrors in d = 2 only fix the lattice f* up to equal-radius swaps
    cfg = hs.fixture_config("disk-d2", m=32, n_max=10, trials=40)
    f = ra.schwarz(hs.build_fixture("disk-d2", cfg))
    rep = hs.estimate_zn(f, cfg)
    assert rep.z[0] == 0
    assert np.all(rep.z <= rep.perimeter_integral * f.h * math.sqrt(2))


def test_support_violation_raises():
    cfg = ExperimentConfig(d=2, L=0.5, H=1.0, m=32, n_max=5, trials=10)
    f = ra.indicator_ball(2, 1.0, 32, [0.4, 0.0], 0.3)
    with pytest.raises(ValueError):
        hs.estimate_zn(f, cfg)


def test_geometry_mismatch_and_bad_config():
    cfg = hs.fixture_config("interval-d1", m=64)
    with pytest.raises(ValueError):
        hs.estimate_zn(ra.indicator_interval(1.0, 32, 0.2, 0.6), cfg)
    with pytest.raises(ValueError):
        ExperimentConfig(L=2.0, H=1.0)
    with pytest.raises(ValueError):
        ExperimentConfig(thresholds=[0.5, 0.2])
    with pytest.raises(ValueError):
        ExperimentConfig(d=0)
    with pytest.raises(KeyError):
        hs.fixture_config("no-such-fixture")


def test_verdict_refused_below_min_trials():
    cfg = hs.fixture_config("interval-d1", m=64, n_max=5, trials=10)
    f = hs.build_fixture("interval-d1", cfg)
    rep = hs.estimate_zn(f, cfg)
    with pytest.raises(ValueError):
        hs.check_bounds(rep, f)


def test_deterministic_and_thread_invariant(tmp_path):
    base = dict(m=32, n_max=20, trials=600, seed=9)
    f = hs.build_fixture("disk-d2", hs.fixture_config("disk-d2", **base))
    reps = [hs.estimate_zn(f, hs.fixture_config("disk-d2", threads=t, **base)) for t in (1, 1, 4)]
    for r in reps[1:]:
        assert np.array_equal(r.z, reps[0].z) and np.array_equal(r.stderr, reps[0].stderr)
    for i, r in enumerate(reps):
        r.to_csv(tmp_path / f"r{i}.csv")
    texts = {(tmp_path / f"r{i}.csv").read_bytes() for i in range(3)}
    assert len(texts) == 1
    other = hs.estimate_zn(f, hs.fixture_config("disk-d2", **{**base, "seed": 10}))
    assert not np.array_equal(other.z, reps[0].z)


def test_upper_bound_formula():
    n = np.arange(4)
    up = hs.upper_bound_prop1(2, 1.0, 1.0, n)
    assert math.isinf(up[0])
    assert up[1] == pytest.approx(2 * 2 * math.pi * 4)
    assert up[3] == pytest.approx(up[1] / 3)


def _lattice_interval_chain(c0, cstar, width, h, L, n_max, trials, seed):
    # a translated lattice interval stays an interval under snapped 1-D polarization
    rng = np.random.default_rng(seed)
    c = np.full(trials, c0)
    out = np.empty((n_max + 1, trials))
    out[0] = 2 * np.minimum(np.abs(c - cstar), width)
    for s in range(n_max):
        p = geom.sample_poles(L, 1, trials, rng)[:, 0]
        p = np.round(p / h) * h
        p[p == 0] = h
        move = c * p > p * p / 2 + 1e-12
        c = np.where(move, p - c, c)
        out[s + 1] = 2 * np.minimum(np.abs(c - cstar), width)
    return out.mean(axis=1), out.std(axis=1, ddof=1) / math.sqrt(trials)


def test_d1_grid_matches_scalar_lattice_chain():
    cfg = hs.fixture_config("interval-d1", m=128, n_max=60, trials=4000, seed=3)
    f = hs.build_fixture("interval-d1", cfg)
    s = ra.schwarz(f)
    x = f.centers()[:, 0]
    on, on_s = x[f.values > 0], x[s.values > 0]
    rep = hs.estimate_zn(f, cfg)
    z, se = _lattice_interval_chain(on.mean(), on_s.mean(), on.size * f.h, f.h, cfg.L,
                                    cfg.n_max, 20000, seed=77)
    assert rep.z[0] == pytest.approx(z[0], abs=1e-12)
    dev = np.abs(rep.z - z)[1:] / np.hypot(rep.stderr, se)[1:]
    # 60 correlated comparisons; a 4 sigma band
    assert dev.max() < 4, dev.max()


def test_zn_nonincreasing_within_noise():
    cfg = hs.fixture_config("bump-d2", m=48, n_max=30, trials=800, seed=4)
    f = hs.build_fixture("bump-d2", cfg)
    rep = hs.estimate_zn(f, cfg)
    slack = rep.perimeter_integral * f.h * math.sqrt(2)
    rise = np.diff(rep.z) - 3 * np.hypot(rep.stderr[1:], rep.stderr[:-1])
    assert np.all(rise <= slack)
    assert rep.z[-1] < rep.z[0]


def test_small_fixture_verdict():
    cfg = hs.fixture_config("interval-d1", m=128, n_max=100, trials=2000, seed=5)
    f = hs.build_fixture("interval-d1", cfg)
    v = hs.check_bounds(hs.estimate_zn(f, cfg), f)
    assert v.ok, v.summary()
    assert v.window == (76, 100)
    assert "limsup" in v.summary()


def test_one_step_drop():
    cfg = hs.fixture_config("interval-d1", m=64, trials=500)
    f = hs.build_fixture("interval-d1", cfg)
    mean, se = hs.one_step_drop_mc(ra.schwarz(f), 0.5, cfg)
    assert mean == 0 and se == 0
    cfg = hs.fixture_config("disk-d2", m=32, trials=200)
    f = hs.build_fixture("disk-d2", cfg)
    mean, se = hs.one_step_drop_mc(ra.schwarz(f), 0.5, cfg)
    assert abs(mean) <= ra.perimeter_integral(f) * f.h * math.sqrt(2)
    mean, se = hs.one_step_drop_mc(f, 0.5, cfg)
    assert mean > 0
    cfg = ExperimentConfig(d=1, L=0.5, H=4.0, m=64, trials=20000, seed=1)
    g = ra.indicator_interval(4.0, 64, 2.0, 3.0)
    with pytest.raises(ValueError):
        hs.one_step_drop_mc(g, 0.5, cfg)  # support reaches past L


def test_report_csv_layout(tmp_path):
    cfg = hs.fixture_config("interval-d1", m=32, n_max=4, trials=50)
    rep = hs.estimate_zn(hs.build_fixture("interval-d1", cfg), cfg)
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    assert body[0] == "n,z_n,stderr,c_n,upper_prop1,lower_b,limsup_target"
    assert len(body) == 6
    assert not any("threads" in ln for ln in lines)
    assert body[1].split(",")[4] == "inf"
