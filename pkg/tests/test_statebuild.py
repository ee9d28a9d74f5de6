import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mappo.statebuild import (MODES, StateConfigError, StateSpec, build_state, build_states,
                              dead_state)


def test_ind_with_id():
    spec = StateSpec("IND", 2, 2)
    assert build_state(spec, None, [[1, 2], [3, 4]], 0).vector.tolist() == [1, 2, 1, 0]


def test_cl_concatenation():
    spec = StateSpec("CL", 2, 2, include_agent_id=False)
    assert build_state(spec, None, [[1, 2], [3, 4]], 1).vector.tolist() == [1, 2, 3, 4]


def test_fp_prunes_flagged_positions():
    spec = StateSpec("FP", 1, 2, env_state_dim=3, include_agent_id=False, fp_overlap_index=(2,))
    assert build_state(spec, [9, 8, 7], [[7, 5]], 0).vector.tolist() == [9, 8, 7, 5]
    assert spec.width == 4


def test_as_and_ep():
    spec = StateSpec("AS", 2, 1, env_state_dim=2, include_agent_id=False)
    assert build_state(spec, [9, 8], [[1], [2]], 1).vector.tolist() == [9, 8, 2]
    ep = StateSpec("EP", 2, 1, env_state_dim=2, include_agent_id=False)
    assert build_state(ep, [9, 8], [[1], [2]], 1).vector.tolist() == [9, 8]


def test_dead_state_examples():
    spec = StateSpec("IND", 3, 4)
    assert dead_state(spec, 2).vector.tolist() == [0, 0, 0, 0, 0, 0, 1]
    no_id = StateSpec("IND", 3, 4, include_agent_id=False)
    assert not dead_state(no_id, 2).vector.any()
    a, b = dead_state(spec, 0).vector, dead_state(spec, 1).vector
    diff = np.nonzero(a != b)[0]
    assert diff.min() >= spec.base_width


def test_mask_dead_agent_six_features():
    spec = StateSpec("IND", 3, 6)
    obs = np.arange(18.0).reshape(3, 6) + 1
    v = build_state(spec, None, obs, 1, alive=False).vector
    assert v.tolist() == [0] * 6 + [0, 1, 0]
    assert not build_state(spec, None, obs, 1, alive=False, death_mode="mask_no_id").vector.any()
    kept = build_state(spec, None, obs, 1, alive=False, death_mode="keep").vector
    assert kept[:6].tolist() == obs[1].tolist()


def test_errors():
    spec = StateSpec("CL", 2, 2)
    with pytest.raises(IndexError):
        build_state(spec, None, np.zeros((2, 2)), 2)
    with pytest.raises(IndexError):
        dead_state(spec, 5)
    with pytest.raises(ValueError):
        build_state(spec, None, np.zeros((3, 2)), 0)
    with pytest.raises(StateConfigError):
        StateSpec("EP", 2, 2, env_state_dim=0)
    with pytest.raises(StateConfigError):
        StateSpec("FP", 2, 2, env_state_dim=3, fp_overlap_index=(1, 1))
    with pytest.raises(StateConfigError):
        StateSpec("FP", 2, 2, env_state_dim=3, fp_overlap_index=(3,))
    with pytest.raises(StateConfigError):
        StateSpec("XYZ", 2, 2)


def closed_form_width(mode, n, d, s, k, with_id):
    base = {"IND": d, "EP": s, "CL": n * d, "AS": s + d, "FP": s + d - k}[mode]
    return base + (n if with_id else 0)


def test_width_contract_random_specs():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        mode = MODES[rng.integers(len(MODES))]
        n, d, s = rng.integers(1, 6), rng.integers(1, 8), rng.integers(1, 8)
        k = rng.integers(0, s + 1)
        overlap = tuple(rng.choice(s, k, replace=False)) if mode == "FP" else ()
        with_id = bool(rng.integers(2))
        spec = StateSpec(mode, int(n), int(d), int(s), with_id, overlap)
        obs = rng.normal(size=(n, d))
        v = build_state(spec, rng.normal(size=s), obs, int(rng.integers(n))).vector
        expect = closed_form_width(mode, n, d, s, len(overlap), with_id)
        assert spec.width == expect and v.shape == (expect,)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_fp_is_as_minus_overlap(seed):
    rng = np.random.default_rng(seed)
    n, d, s = rng.integers(1, 5), rng.integers(1, 6), rng.integers(1, 9)
    overlap = tuple(int(i) for i in rng.choice(s, rng.integers(0, s + 1), replace=False))
    env_state, obs = rng.normal(size=s), rng.normal(size=(n, d))
    agent = int(rng.integers(n))
    as_v = build_state(StateSpec("AS", n, d, s), env_state, obs, agent).vector
    fp_v = build_state(StateSpec("FP", n, d, s, True, overlap), env_state, obs, agent).vector
    assert np.array_equal(np.delete(as_v, list(overlap)), fp_v)


class Untouchable:
    def __array__(self, *a, **k):
        raise AssertionError("env state was read")

    def __getattr__(self, name):
        raise AssertionError("env state was read")


def test_ind_never_reads_env_state():
    spec = StateSpec("IND", 3, 2)
    obs = np.ones((3, 2))
    build_state(spec, Untouchable(), obs, 0)
    out = build_states(spec, Untouchable(), obs[None], np.ones((1, 3), dtype=bool))
    assert out.shape == (1, 3, 5)


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("death_mode", ["mask", "mask_no_id", "keep"])
def test_batched_matches_single(mode, death_mode):
    rng = np.random.default_rng(4)
    E, n, d, s = 3, 3, 4, 5
    spec = StateSpec(mode, n, d, s, True, (1, 3) if mode == "FP" else ())
    env_state, obs = rng.normal(size=(E, s)), rng.normal(size=(E, n, d))
    alive = rng.random((E, n)) < 0.6
    out = build_states(spec, env_state, obs, alive, death_mode)
    for e in range(E):
        for a in range(n):
            single = build_state(spec, env_state[e], obs[e], a, alive[e, a], death_mode).vector
            assert np.array_equal(out[e, a], single)
