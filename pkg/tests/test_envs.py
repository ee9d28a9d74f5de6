import numpy as np
import pytest

from mappo.envs.base import VecEnv, env_names, make_env
from mappo.envs.comm import CommEnv, ReferenceEnv
from mappo.envs.skirmish import (SkirmishEnv, focus_fire_policy, random_policy, run_scripted)
from mappo.envs.spread import (COLLISION_PENALTY, SpreadEnv, oracle_episode_return,
                               random_episode_return)
from mappo.envs.turnchain import (NO_ACTION, TurnchainEnv, TurnRewardAccumulator, turn_rewards)

from oracles import particle_random_return

ALL = ["bandit", "comm", "reference", "skirmish", "spread", "turnchain"]


def test_registry():
    assert env_names() == ALL
    with pytest.raises(KeyError):
        make_env("starcraft")


def random_actions(step, rng, turn_based=False):
    n = step.avail.shape[0]
    acts = np.array([rng.choice(np.flatnonzero(step.avail[i])) for i in range(n)])
    if turn_based:
        out = np.full(n, NO_ACTION)
        out[step.acting] = acts[step.acting]
        return out
    return acts


def trace(name, seed, steps=60):
    env = make_env(name, seed=seed)
    rng = np.random.default_rng(seed)
    st = env.reset()
    out = [st]
    for _ in range(steps):
        st = env.step(random_actions(st, rng, env.descriptor.turn_based))
        out.append(st)
        if st.done:
            st = env.reset()
            out.append(st)
    return env.descriptor, out


@pytest.mark.parametrize("name", ALL)
def test_shapes_match_descriptor(name):
    d, steps = trace(name, 3)
    for st in steps:
        assert st.obs.shape == (d.n_agents, d.obs_dim)
        assert st.alive.shape == (d.n_agents,)
        assert st.avail.shape == (d.n_agents, d.n_actions)
        if d.env_state_dim:
            assert st.state.shape == (d.env_state_dim,)
        else:
            assert st.state is None
        assert np.isscalar(st.reward) or np.ndim(st.reward) == 0
        assert np.all(st.avail[st.alive].any(axis=1))


@pytest.mark.parametrize("name", ALL)
def test_same_seed_same_stream(name):
    _, a = trace(name, 11)
    _, b = trace(name, 11)
    for x, y in zip(a, b):
        assert np.array_equal(x.obs, y.obs) and x.reward == y.reward and x.done == y.done
        assert np.array_equal(x.avail, y.avail) and np.array_equal(x.alive, y.alive)
        if x.state is not None:
            assert np.array_equal(x.state, y.state)


def test_vecenv_independent_of_instance_count():
    a, b = VecEnv.make("spread", 4, seed=5), VecEnv.make("spread", 4, seed=5)
    ra = a.reset()
    rb = b.reset()
    assert np.array_equal(ra.obs, rb.obs)
    rng = np.random.default_rng(0)
    for _ in range(30):
        acts = rng.integers(0, 5, (4, 3))
        sa, sb = a.step(acts), b.step(acts)
        assert np.array_equal(sa.obs, sb.obs) and np.array_equal(sa.reward, sb.reward)


def test_vecenv_auto_reset_reports_episode():
    v = VecEnv.make("bandit", 3, seed=0)
    v.reset()
    st = v.step(np.array([[0], [1], [0]]))
    assert st.done.all()
    assert [(e, r, w) for e, r, w in st.episodes] == [(0, 1.0, True), (1, 0.0, False), (2, 1.0, True)]


def test_vecenv_env_mask():
    v = VecEnv.make("spread", 2, seed=0)
    first = v.reset()
    st = v.step(np.zeros((2, 3), dtype=int), env_mask=np.array([False, True]))
    assert st.reward[0] == 0.0 and st.reward[1] != 0.0
    assert np.array_equal(st.obs[0], first.obs[0])


# ---------------------------------------------------------------- spread

def test_spread_covered_landmarks_zero_reward():
    env = SpreadEnv(3, seed=0)
    lm = [[-0.8, 0.0], [0.0, 0.5], [0.8, -0.5]]
    env.set_layout(lm, lm)
    assert env.reward() == 0.0
    env.set_layout([[0.0, 0.0], [0.05, 0.0], [0.8, -0.5]], [[0.0, 0.0], [0.05, 0.0], [0.8, -0.5]])
    assert env.reward() == -COLLISION_PENALTY


def test_spread_single_agent_distance():
    env = SpreadEnv(1, seed=0)
    env.set_layout([[0.3, -0.1]], [[0.3, 0.4]])
    assert abs(env.reward() + 0.5) < 1e-15


def test_spread_oracle_far_better_than_random():
    oracle = np.mean([oracle_episode_return(s) for s in range(50)])
    rand = np.mean([random_episode_return(s) for s in range(50)])
    assert oracle > rand + 25.0


# ---------------------------------------------------------------- comm / reference

def test_comm_listener_on_goal_scores_zero():
    env = CommEnv(seed=0)
    env.reset()
    env.pos = env.landmarks[env.goal].copy()
    st = env.step([0, 0])
    assert st.reward == 0.0


def test_comm_roles_and_masks():
    env = CommEnv(seed=0)
    st = env.reset()
    assert env.descriptor.heterogeneous
    assert st.avail[0].sum() == env.n_symbols and st.avail[1].all()
    assert st.obs[0, env.goal] == 1.0
    st = env.step([2, 0])
    assert st.obs[1, -env.n_symbols:].tolist() == [0.0, 0.0, 1.0]
    with pytest.raises(ValueError):
        env.step([4, 0])


def test_comm_symbols_cover_goals():
    # one symbol per landmark lets a lookup-table listener always know its goal
    env = CommEnv(seed=1)
    assert env.n_symbols >= len(env.reset().obs[0][:3])
    with pytest.raises(ValueError):
        CommEnv(n_symbols=6)


def mean_random_return(env, episodes, seed):
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(episodes):
        st = env.reset()
        while True:
            st = env.step(random_actions(st, rng))
            total += st.reward
            if st.done:
                break
    return total / episodes


@pytest.mark.parametrize("cls,movers", [(CommEnv, 1), (ReferenceEnv, 2)])
def test_random_policy_matches_monte_carlo_oracle(cls, movers):
    got = mean_random_return(cls(seed=21), 1500, seed=22)
    expect = particle_random_return(movers, 1500, seed=23)
    assert abs(got - expect) <= 0.05 * abs(expect)


def test_reference_hears_partner_symbol():
    env = ReferenceEnv(seed=0)
    env.reset()
    st = env.step([env.n_symbols * 1 + 2, 0])
    assert st.obs[1, -env.n_symbols:].tolist() == [0.0, 0.0, 1.0]
    assert st.obs[0, -env.n_symbols:].tolist() == [1.0, 0.0, 0.0]


# ---------------------------------------------------------------- turnchain

def test_turn_reward_four_players():
    out = turn_rewards([1.0, 0.0, 2.0, 0.0], [0, 1, 2, 3], 4)
    assert out[0] == 3.0
    assert out.tolist() == [3.0, 2.0, 2.0, 0.0]


def test_turn_rewards_zero_stream():
    assert not turn_rewards(np.zeros(9), np.arange(9) % 3, 3).any()


def window_sum_oracle(raw, n):
    return [sum(raw[s:s + n]) for s in range(len(raw))]


@pytest.mark.parametrize("n", [2, 3, 4])
def test_turn_rewards_match_window_sums(n):
    rng = np.random.default_rng(n)
    raw = rng.integers(0, 3, 23).astype(float)
    actors = np.arange(23) % n
    out = turn_rewards(raw, actors, n)
    assert out.tolist() == window_sum_oracle(raw.tolist(), n)
    # every raw reward is counted once per player window that covers it
    full = len(raw) - (n - 1)
    assert out.sum() == sum(min(s + 1, n) * raw[s] for s in range(len(raw)))
    assert all(out[s] == raw[s:s + n].sum() for s in range(full))


def test_accumulator_matches_batch_function():
    n, T = 3, 14
    rng = np.random.default_rng(4)
    raw = rng.integers(0, 2, T).astype(float)
    buf = np.zeros((T, 1, n))
    acc = TurnRewardAccumulator(1, n)
    for s in range(T):
        acc.open_window(0, s % n, s)
        acc.credit(0, raw[s], buf)
    streamed = [buf[s, 0, s % n] for s in range(T)]
    assert streamed == turn_rewards(raw, np.arange(T) % n, n).tolist()


def test_turnchain_telescoping_on_real_episodes():
    for seed in range(10):
        env = TurnchainEnv(n_players=4, seed=seed)
        st = env.reset()
        rng = np.random.default_rng(seed)
        raw, actors = [], []
        while not st.done:
            actors.append(st.acting)
            st = env.step(random_actions(st, rng, turn_based=True))
            raw.append(st.reward)
        tr = turn_rewards(raw, actors, 4)
        per_player = [tr[np.array(actors) == p].sum() for p in range(4)]
        # gamma = 1: windows tile the stream once per player, minus the ragged start
        for p in range(4):
            first = actors.index(p) if p in actors else len(raw)
            assert per_player[p] == sum(raw[first:])


def test_turnchain_rejects_out_of_turn():
    env = TurnchainEnv(n_players=3, seed=0)
    env.reset()
    with pytest.raises(ValueError):
        env.step([NO_ACTION, 0, NO_ACTION])
    with pytest.raises(ValueError):
        env.step([0, 0, NO_ACTION])
    with pytest.raises(ValueError):
        TurnchainEnv(n_players=5)


def test_turnchain_pile_scoring():
    env = TurnchainEnv(n_players=2, seed=0, max_rank=2, deck_size=4)
    env.reset()
    env.hands[:] = [[1, 2], [2, 1]]
    st = env.play(0, 0)
    assert st.reward == 1.0 and env.pile == 1
    st = env.play(1, 0)
    assert st.reward == 1.0 and st.done and st.info["win"]


# ---------------------------------------------------------------- skirmish

def test_skirmish_dead_agent_noop_only():
    env = SkirmishEnv(seed=0)
    env.reset()
    env.ally_hits[1] = 0
    st = env.step([0, 0, 0])
    assert not st.alive[1]
    assert st.avail[1].tolist() == [True] + [False] * (env.n_actions - 1)
    assert not st.obs[1].any()
    with pytest.raises(ValueError):
        env.step([0, 1, 0])


def test_skirmish_zero_enemy_hp_wins_immediately():
    win, _ = run_scripted(random_policy, 20, seed=0, enemy_hp=0)
    assert win == 1.0
    env = SkirmishEnv(seed=0, enemy_hp=0)
    env.reset()
    st = env.step([0, 0, 0])
    assert st.done and st.info["win"]


def test_skirmish_focus_fire_beats_random():
    ff_win, ff_ret = run_scripted(focus_fire_policy, 200, seed=1)
    rnd_win, rnd_ret = run_scripted(random_policy, 200, seed=1)
    assert ff_win > rnd_win
    assert ff_ret > rnd_ret


def test_skirmish_state_layout():
    env = SkirmishEnv(seed=3)
    st = env.reset()
    d = env.descriptor
    assert d.has_deaths
    # overlap positions hold values repeated verbatim in every live observation
    dup = st.state[list(d.fp_overlap_index)]
    for i in range(d.n_agents):
        assert np.array_equal(st.obs[i, -len(dup):], dup)
    # the global state carries no availability information
    assert d.env_state_dim == 3 * env.na + 3 * env.ne + 1


def test_shared_reward_is_scalar_for_everyone():
    v = VecEnv.make("skirmish", 2, seed=0)
    v.reset()
    st = v.step(np.zeros((2, 3), dtype=int))
    assert st.reward.shape == (2,)
