import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mappo.valuenorm import VAR_FLOOR, RunningMoments


def test_fresh_is_identity():
    m = RunningMoments()
    x = np.array([-3.0, 0.0, 7.5])
    assert np.array_equal(m.normalize(x), x)
    assert np.array_equal(m.denormalize(x), x)
    assert m.mean == 0.0 and m.std == 1.0


def test_constant_stream_hits_floor():
    m = RunningMoments().update([4.0, 4.0, 4.0])
    assert abs(m.mean - 4.0) < 1e-12
    assert m.var == VAR_FLOOR


def test_two_point_batch():
    m = RunningMoments().update([0.0, 2.0])
    assert abs(m.mean - 1.0) < 1e-12
    assert abs(m.mean_sq - 2.0) < 1e-12
    assert abs(m.var - 1.0) < 1e-12


def test_normalize_known_moments():
    m = RunningMoments().update([-1.0, 3.0])  # mean 1, std 2
    assert abs(m.normalize(5.0) - 2.0) < 1e-12


def test_monte_carlo_moments():
    x = np.random.default_rng(0).normal(5.0, 3.0, 1000)
    m = RunningMoments()
    for chunk in np.split(x, 10):
        m.update(chunk)
    assert abs(m.mean - 5.0) < 0.3
    assert abs(m.std - 3.0) < 0.3


def test_order_insensitive_within_batch():
    x = np.random.default_rng(1).normal(size=50)
    a = RunningMoments().update(x)
    b = RunningMoments().update(x[::-1])
    assert abs(a.mean - b.mean) < 1e-15 and abs(a.mean_sq - b.mean_sq) < 1e-15


def test_round_trip_large():
    rng = np.random.default_rng(2)
    m = RunningMoments().update(rng.normal(-3.0, 40.0, 500))
    x = rng.normal(0.0, 100.0, 10_000)
    assert np.max(np.abs(m.denormalize(m.normalize(x)) - x)) < 1e-9


def test_post_update_whitening():
    batch = np.random.default_rng(3).normal(12.0, 0.4, 10_000)
    m = RunningMoments().update(batch)
    z = m.normalize(batch)
    assert abs(z.mean()) < 0.05
    assert abs(z.std() - 1.0) < 0.05


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 31), loc=st.floats(-100, 100), scale=st.floats(0.01, 50))
def test_normalize_preserves_order(seed, loc, scale):
    rng = np.random.default_rng(seed)
    m = RunningMoments().update(rng.normal(loc, scale, 20))
    x = rng.normal(loc, scale, 30)
    assert np.argmax(m.normalize(x)) == np.argmax(x)
    assert np.array_equal(np.argsort(m.normalize(x), kind="stable"), np.argsort(x, kind="stable"))


def test_bad_batches():
    with pytest.raises(ValueError):
        RunningMoments().update([])
    with pytest.raises(ValueError):
        RunningMoments().update([1.0, np.nan])


def test_state_array_round_trip():
    m = RunningMoments().update([1.0, 2.0, 5.0]).update([0.5])
    r = RunningMoments.from_state_array(m.state_array())
    assert r == m
    assert m.state_array().dtype == np.float64


def test_scale_only():
    m = RunningMoments().update([-1.0, 3.0])
    assert abs(m.scale(4.0) - 2.0) < 1e-12
