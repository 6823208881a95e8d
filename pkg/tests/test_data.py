import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mppi_pid.control import InputConstraints
from mppi_pid.data import (
    RAW_HEADER, SEGMENT_HEADER, GroundTruthPlant, LogConfig, PreprocessConfig, RawLog, Segment, Splits,
    generate_logs, median_filter, moving_average, preprocess, resample, split_at_gaps, split_counts, total_samples,
)
from mppi_pid.dynamics import euler_step

SMALL = LogConfig(n_logs=3, duration=61.0, gaps_per_log=0.0)


def synthetic_log(duration=60.0, h=0.0667, seed=0):
    n = int(math.floor(duration / h + 1e-9)) + 1
    t = h * np.arange(n)
    rng = np.random.default_rng(seed)
    vals = np.column_stack([np.cumsum(rng.normal(0, 0.01, (n, 3)), axis=0), rng.normal(0, 0.1, (n, 3)),
                            rng.uniform(0, 100, n), rng.uniform(-65, 65, n)])
    return RawLog(t, vals)


def test_noiseless_residual_free_logs_replay_euler_steps():
    plant = GroundTruthPlant().without_residual().noiseless()
    (log,) = generate_logs(plant, LogConfig(n_logs=1, duration=20.0, gaps_per_log=0.0), seed=3)
    v = log.values
    x = np.column_stack([v[:, 0:2], np.sin(v[:, 2]), np.cos(v[:, 2]), v[:, 3:6]])
    for k in range(len(log) - 1):
        pred = euler_step(x[k], v[k, 6:8], plant.phys, log.t[k + 1] - log.t[k])
        assert np.allclose(pred[[0, 1, 4, 5, 6]], x[k + 1, [0, 1, 4, 5, 6]], rtol=1e-9, atol=1e-12)


def test_logs_are_deterministic_and_feasible():
    a = generate_logs(GroundTruthPlant(), SMALL, seed=7)
    b = generate_logs(GroundTruthPlant(), SMALL, seed=7)
    c = generate_logs(GroundTruthPlant(), SMALL, seed=8)
    assert all(np.array_equal(x.values, y.values) and np.array_equal(x.t, y.t) for x, y in zip(a, b))
    assert not np.array_equal(a[0].values, c[0].values)
    cons = InputConstraints()
    for log in a:
        assert np.all(np.diff(log.t) > 0)
        u = log.values[:, 6:8]
        assert np.all(u >= np.array(cons.u_min)) and np.all(u <= np.array(cons.u_max))
        du = np.diff(u, axis=0)
        assert np.all(du >= np.array(cons.du_min) - 1e-12) and np.all(du <= np.array(cons.du_max) + 1e-12)


def test_default_log_volume_matches_sizing_target():
    cfg = LogConfig()
    n = cfg.n_logs * round(cfg.duration / cfg.h)
    assert abs(n - 70_926) / 70_926 < 0.02
    assert cfg.n_logs * cfg.duration / 60 == pytest.approx(78.8, abs=0.1)


def test_gaps_are_inserted_and_split():
    logs = generate_logs(GroundTruthPlant(), LogConfig(n_logs=4, duration=60.0, gaps_per_log=3.0), seed=1)
    assert any(len(split_at_gaps(l.t)) > 1 for l in logs)
    for l in logs:
        for sl in split_at_gaps(l.t):
            assert np.all(np.diff(l.t[sl]) <= 0.1)


def test_log_config_validation():
    with pytest.raises(ValueError):
        LogConfig(duration=0.0)
    with pytest.raises(ValueError):
        LogConfig(n_logs=0)


def test_split_at_gaps_example():
    t = np.array([0.0, 0.05, 0.1, 0.3, 0.35, 0.6])
    assert split_at_gaps(t) == [slice(0, 3), slice(3, 5), slice(5, 6)]


def test_resample_uniform_and_exact_on_linear_signals():
    t = np.sort(np.random.default_rng(0).uniform(0, 10, 200))
    vals = np.column_stack([3 * t + 1, -t])
    tn, vn = resample(t, vals, 0.0667)
    assert np.max(np.abs(np.diff(tn) - 0.0667)) < 1e-12
    assert np.allclose(vn[:, 0], 3 * tn + 1, rtol=1e-12) and np.allclose(vn[:, 1], -tn, rtol=1e-12, atol=1e-12)


def test_filters_preserve_constants_and_remove_impulses():
    x = np.full(20, 2.5)
    assert np.array_equal(median_filter(x, 3), x)
    for w in (5, 7, 9):
        assert np.array_equal(moving_average(x, w), x)
    y = np.zeros(15)
    y[7] = 100.0
    assert np.array_equal(median_filter(y, 3), np.zeros(15))


def test_filters_truncate_edge_windows():
    x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    assert np.allclose(moving_average(x, 3), [1.5, 2.0, 3.0, 4.0, 4.5])
    assert np.allclose(moving_average(x, 5), [2.0, 2.5, 3.0, 3.5, 4.0])
    assert np.array_equal(median_filter(np.array([5.0, 1.0, 3.0]), 3), [3.0, 3.0, 2.0])


@given(n=st.integers(0, 5000))
def test_split_counts_exhaustive(n):
    tr, va, te = split_counts(n)
    assert tr + va + te == n and va == te and tr >= 0
    assert abs(va - 0.15 * n) <= 0.5


def test_sixty_second_log_gives_twelve_segments_split_8_2_2():
    splits = preprocess([synthetic_log(60.0)])
    assert (len(splits.train), len(splits.val), len(splits.test)) == (8, 2, 2)
    for seg in splits.train + splits.val + splits.test:
        assert len(seg) == 75
        assert np.max(np.abs(np.diff(seg.t) - 0.0667)) < 1e-12
        assert np.allclose(seg.x[:, 2] ** 2 + seg.x[:, 3] ** 2, 1.0, atol=1e-12)


def test_splits_are_disjoint_and_exhaustive():
    logs = [synthetic_log(40.0, seed=s) for s in range(5)]
    sp = preprocess(logs)
    starts = [(s.t[0], s.x[0, 0]) for s in sp.train + sp.val + sp.test]
    assert len(starts) == len(set(starts)) == 5 * 8


def test_short_intervals_dropped_and_counted():
    t = np.concatenate([0.0667 * np.arange(5), 10 + 0.0667 * np.arange(200)])
    vals = np.zeros((len(t), 8))
    vals[:, 2] = 0.3
    sp = preprocess([RawLog(t, vals)])
    assert sp.dropped_intervals == 1
    assert len(sp.train) + len(sp.val) + len(sp.test) == 2


def test_psi_is_unwrapped_before_filtering():
    n = 400
    t = 0.0667 * np.arange(n)
    psi = np.mod(np.linspace(0, 6 * math.pi, n) + math.pi, 2 * math.pi) - math.pi
    vals = np.zeros((n, 8))
    vals[:, 2] = psi
    sp = preprocess([RawLog(t, vals)])
    for seg in sp.train + sp.val + sp.test:
        ang = np.unwrap(np.arctan2(seg.x[:, 2], seg.x[:, 3]))
        assert np.all(np.abs(np.diff(ang)) < 0.1)


def test_csv_round_trips(tmp_path):
    log = synthetic_log(10.0)
    log.to_csv(tmp_path / "log.csv")
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == ",".join(RAW_HEADER)
    back = RawLog.from_csv(tmp_path / "log.csv")
    assert np.array_equal(back.t, log.t) and np.array_equal(back.values, log.values)
    sp = preprocess([synthetic_log(60.0)])
    sp.save(tmp_path / "seg")
    assert (tmp_path / "seg" / "train" / "seg_00000.csv").read_text().splitlines()[0] == ",".join(SEGMENT_HEADER)
    back = Splits.load(tmp_path / "seg")
    assert np.array_equal(back.test[1].x, sp.test[1].x) and np.array_equal(back.val[0].u, sp.val[0].u)
    with pytest.raises(FileNotFoundError):
        Splits.load(tmp_path / "missing")


def test_plant_residual_is_bounded_and_acts_on_velocities_only():
    p = GroundTruthPlant()
    x = np.array([0, 0, 0, 1, 0.15, 0.02, 0.1])
    u = np.array([50.0, 60.0])
    base = GroundTruthPlant().without_residual().noiseless().step(x, u, 0.0667)
    full = p.noiseless().step(x, u, 0.0667)
    assert np.array_equal(base[:4], full[:4])
    assert np.any(base[4:] != full[4:])
    assert np.all(np.abs(p.residual_rate(x, u)) < 1.0)
    with pytest.raises(ValueError):
        p.step(x, u, 0.0)


def test_total_samples():
    logs = generate_logs(GroundTruthPlant(), SMALL, seed=0)
    assert total_samples(logs) == sum(len(l.t) for l in logs) == 3 * round(61.0 / 0.0667)
    assert isinstance(PreprocessConfig().segment_len, int) and PreprocessConfig().segment_len == 75
    assert isinstance(Segment(np.zeros(2), np.zeros((2, 7)), np.zeros((2, 2))), Segment)
