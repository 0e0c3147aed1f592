import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctrcoreset.denoise import (DenoiseConfig, LossStats, filter_coreset, mc_loss_passes, removal_count,
                                upper_bound, write_report)
from ctrcoreset.model import CTRNet


def _stats(values):
    s = LossStats(1)
    for v in values:
        s.update([v])
    return s


def test_streaming_example():
    s = _stats([1.0, 2.0, 3.0])
    assert s.mean[0] == 2.0 and s.variance[0] == 1.0


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40))
def test_streaming_matches_two_pass(values):
    s = _stats(values)
    ref = np.asarray(values)
    assert s.mean[0] == pytest.approx(ref.mean(), abs=1e-10 * max(1.0, np.abs(ref).max()))
    assert s.variance[0] == pytest.approx(ref.var(ddof=1), abs=1e-10 * max(1.0, ref.var(ddof=1), np.abs(ref).max()))


def test_upper_bound_examples():
    cfg = DenoiseConfig(n_passes=10)
    s = LossStats(1)
    s.n, s.mean[:], s._m2[:] = 10, 0.5, 0.04 * 9
    assert upper_bound(s, cfg)[0] == pytest.approx(0.5 + 1.96 * np.sqrt(0.004), abs=1e-12)
    assert upper_bound(s, cfg)[0] == pytest.approx(0.62396, abs=1e-5)
    assert upper_bound(s, DenoiseConfig(n_passes=10, z=0.0))[0] == 0.5
    s._m2[:] = 0.0
    assert upper_bound(s, cfg)[0] == 0.5
    with pytest.raises(ValueError):
        upper_bound(s, DenoiseConfig(n_passes=5))


def test_zero_dropout_gives_zero_variance():
    net = CTRNet([4, 4], embed_dim=2, hidden=(5,), dropout=0.0, seed=0)
    X = np.array([[1, 2], [3, 0], [2, 2]])
    stats = mc_loss_passes(net, X, np.array([1.0, 0.0, 0.4]), DenoiseConfig())
    assert np.array_equal(stats.variance, np.zeros(3))


def test_mc_passes_deterministic_and_vary():
    net = CTRNet([4, 4], embed_dim=3, hidden=(8, 8), dropout=0.3, seed=2)
    X = np.random.default_rng(0).integers(0, 4, (20, 2))
    y = np.random.default_rng(1).random(20)
    a = mc_loss_passes(net, X, y, DenoiseConfig(seed=3))
    b = mc_loss_passes(net, X, y, DenoiseConfig(seed=3))
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.variance, b.variance)
    assert a.variance.max() > 0


def test_no_hidden_layers_rejected():
    with pytest.raises(ValueError):
        mc_loss_passes(CTRNet([3], embed_dim=2, hidden=()), np.array([[1]]), np.array([1.0]), DenoiseConfig())


def test_filter_examples():
    upper = np.array([0.3, 0.9, 0.1, 0.5, 0.2, 0.4, 0.35, 0.6, 0.05, 0.7])
    keep, removed = filter_coreset(upper, 0.1)
    assert removed.tolist() == [1] and len(keep) == 9
    keep, removed = filter_coreset(upper, 0.0)
    assert keep.tolist() == list(range(10)) and removed.size == 0


def test_filter_ties_keep_lowest_positions():
    keep, removed = filter_coreset(np.ones(10), 0.3)
    assert keep.tolist() == list(range(7)) and removed.tolist() == [7, 8, 9]


def test_removal_count_floor():
    assert removal_count(100, 0.1) == 10
    assert removal_count(9, 0.1) == 0
    assert removal_count(30, 0.1) == 3


def test_config_validation():
    for bad in ({"n_passes": 1}, {"remove_rate": 1.0}, {"z": -1.0}):
        with pytest.raises(ValueError):
            DenoiseConfig(**bad)


def test_report(tmp_path):
    s = LossStats(2).update([1.0, 2.0]).update([3.0, 2.0])
    upper = upper_bound(s, DenoiseConfig(n_passes=2))
    write_report(tmp_path / "r.csv", [10, 20], s, upper, [0])
    rows = list(csv.reader((tmp_path / "r.csv").open()))
    assert rows[0] == ["sample_index", "m_loss", "v_loss", "l_upper", "removed"]
    assert rows[1][0] == "10" and rows[1][4] == "1" and float(rows[1][2]) == 2.0
