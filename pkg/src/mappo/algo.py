"""PPO losses, actor-critic networks and the recurrent MAPPO training loop.

One code path serves MAPPO and IPPO: the only difference is the critic input
(``state_mode``), with IND giving the decentralized critic.

Per iteration:
  collect ``num_envs x buffer_length`` steps -> death handling -> GAE with
  denormalized values -> value statistics update -> ``ppo_epochs`` passes over
  ``num_minibatches`` shuffled groups of BPTT chunks, each chunk replayed from
  its stored hidden state.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as T
from .envs.base import VecEnv, make_env
from .envs.turnchain import NO_ACTION, TurnRewardAccumulator
from .nn import Categorical, GruState, Network
from .optim import Adam, clip_grad_norm, grad_norm
from .rollout import (TrajectoryBatch, apply_death_handling, compute_gae, gather_chunks,
                      sample_minibatches, split_chunks)
from .seeding import derive_seeds
from .statebuild import DEATH_MODES, MODES, StateSpec, build_states
from .tensor import NonFiniteError, Tensor
from .valuenorm import RunningMoments

METRIC_COLUMNS = ("step", "iter", "mean_ep_reward", "win_rate", "policy_loss", "value_loss",
                  "entropy", "clip_frac", "grad_norm_actor", "grad_norm_critic",
                  "value_mean", "value_std", "seconds")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    env: str = "spread"
    env_params: dict = field(default_factory=dict)
    seed: int = 1
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    ppo_epochs: int = 10
    num_minibatches: int = 1
    entropy_coef: float = 0.01
    actor_lr: float = 7e-4
    critic_lr: float = 7e-4
    max_grad_norm: float = 10.0
    chunk_length: int = 10
    value_loss: str = "huber"
    huber_delta: float = 10.0
    use_value_clip: bool = True
    use_value_norm: bool = True
    use_reward_norm: bool = True
    normalize_advantages: bool = True
    death_mode: str = "mask"
    state_mode: str = "CL"
    include_agent_id: bool = True
    share_policy: bool = True
    num_envs: int = 32
    buffer_length: int = 25
    total_env_steps: int = 2_000_000
    hidden_dim: int = 64
    n_fc: int = 2
    activation: str = "tanh"
    recurrent: bool = True
    stacked_frames: int = 1
    feature_norm: bool = True
    actor_gain: float = 0.01
    adam_eps: float = 1e-5
    weight_decay: float = 0.0
    eval_interval: int = 0
    eval_episodes: int = 32
    eval_deterministic: bool = True
    score_metric: str = "reward"
    stop_score: float = math.inf  # compared with the median of the last 10 evaluations
    checkpoint_interval: int = 0
    log_wallclock: bool = False

    def validate(self) -> "TrainConfig":
        checks = [
            (0.0 < self.clip_epsilon < 1.0, "clip_epsilon must lie in (0, 1)"),
            (self.ppo_epochs >= 1, "ppo_epochs must be >= 1"),
            (self.num_minibatches >= 1, "num_minibatches must be >= 1"),
            (self.entropy_coef >= 0.0, "entropy_coef must be >= 0"),
            (0.0 <= self.gamma <= 1.0, "gamma must lie in [0, 1]"),
            (0.0 <= self.gae_lambda <= 1.0, "gae_lambda must lie in [0, 1]"),
            (self.actor_lr > 0 and self.critic_lr > 0, "learning rates must be positive"),
            (self.max_grad_norm > 0, "max_grad_norm must be positive"),
            (self.chunk_length >= 1, "chunk_length must be >= 1"),
            (self.value_loss in ("huber", "squared"), "value_loss must be huber or squared"),
            (self.huber_delta > 0, "huber_delta must be positive"),
            (self.death_mode in DEATH_MODES, f"death_mode must be one of {DEATH_MODES}"),
            (self.state_mode in MODES, f"state_mode must be one of {MODES}"),
            (self.num_envs >= 1 and self.buffer_length >= 1, "num_envs and buffer_length must be >= 1"),
            (self.stacked_frames >= 1, "stacked_frames must be >= 1"),
            (self.activation in ("tanh", "relu"), "activation must be tanh or relu"),
            (self.score_metric in ("reward", "win_rate"), "score_metric must be reward or win_rate"),
            (self.eval_episodes >= 1, "eval_episodes must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    def replace(self, **kw) -> "TrainConfig":
        known = {f.name for f in fields(self)}
        bad = set(kw) - known
        if bad:
            raise ConfigError(f"unknown config key(s): {sorted(bad)}")
        d = asdict(self)
        d.update(kw)
        return TrainConfig(**d)

    @property
    def steps_per_iteration(self) -> int:
        return self.num_envs * self.buffer_length


# Per-task settings.  The MPE rows keep the usual tuned values (lr, gain,
# network, epochs, mini-batches, activation); num_envs is scaled down for
# desk budgets except in the full-scale preset.
PRESETS: dict[str, dict] = {
    "spread": dict(env="spread", state_mode="CL", actor_lr=7e-4, critic_lr=7e-4, actor_gain=0.01,
                   recurrent=True, ppo_epochs=10, num_minibatches=1, activation="tanh",
                   num_envs=32, buffer_length=25, total_env_steps=2_000_000),
    "spread-full-scale": dict(env="spread", state_mode="CL", actor_lr=7e-4, critic_lr=7e-4,
                               actor_gain=0.01, recurrent=True, ppo_epochs=10, num_minibatches=1,
                               activation="tanh", num_envs=128, buffer_length=25,
                               total_env_steps=10_000_000),
    "reference": dict(env="reference", state_mode="CL", actor_lr=7e-4, critic_lr=7e-4,
                      actor_gain=0.01, recurrent=True, ppo_epochs=15, num_minibatches=1,
                      activation="relu", num_envs=32, buffer_length=25),
    "comm": dict(env="comm", state_mode="CL", actor_lr=7e-4, critic_lr=7e-4, actor_gain=0.01,
                 recurrent=True, ppo_epochs=15, num_minibatches=1, activation="tanh",
                 share_policy=False, num_envs=32, buffer_length=25),
    "turnchain": dict(env="turnchain", state_mode="AS", actor_lr=7e-4, critic_lr=1e-3,
                      actor_gain=0.01, recurrent=False, ppo_epochs=15, num_minibatches=1,
                      activation="relu", entropy_coef=0.015, num_envs=32, buffer_length=20,
                      total_env_steps=200_000),
    # 3 allies against 4 enemies: focus fire alone rarely wins, so there is room
    # between variants instead of every run saturating at a 100% win rate
    "skirmish": dict(env="skirmish", env_params={"n_enemies": 4}, state_mode="FP",
                     actor_lr=5e-4, critic_lr=5e-4, actor_gain=0.01, recurrent=True,
                     ppo_epochs=15, num_minibatches=1, activation="relu", clip_epsilon=0.2,
                     num_envs=8, buffer_length=100, total_env_steps=64_000, eval_interval=4,
                     score_metric="win_rate"),
    "bandit": dict(env="bandit", state_mode="IND", recurrent=False, ppo_epochs=5,
                   num_envs=8, buffer_length=4, total_env_steps=50 * 32, chunk_length=4),
}


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    return TrainConfig().replace(**{**PRESETS[name], **overrides}).validate()


# ---------------------------------------------------------------- losses


def policy_loss(new_log_probs, old_log_probs, advantages, mask, clip_eps, entropy=None,
                entropy_coef=0.0, count=None):
    """Clipped surrogate, negated for minimization.

    loss = -(1/N) sum_mask min(r A, clip(r, 1-eps, 1+eps) A) - coef * (1/N) sum_mask H
    with r = exp(new - old) and N = ``count`` (defaults to the mask size).
    Returns ``(loss, stats)``; stats hold the surrogate term and clip counts.
    """
    new_log_probs = T.as_tensor(new_log_probs)
    old = np.asarray(old_log_probs, dtype=np.float64)
    adv = np.asarray(advantages, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    count = float(mask.sum()) if count is None else float(count)
    ratio = T.exp(T.sub(new_log_probs, old))
    if not np.all(np.isfinite(ratio.data[mask])):
        raise NonFiniteError("policy_loss: non-finite importance ratio")
    surr1 = T.mul(ratio, adv)
    surr2 = T.mul(T.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps), adv)
    surrogate = T.masked_mean(T.minimum(surr1, surr2), mask, count)
    loss = T.neg(surrogate)
    ent_val = 0.0
    if entropy is not None:
        ent = T.masked_mean(entropy, mask, count)
        ent_val = ent.item()
        if entropy_coef:
            loss = T.sub(loss, T.mul(ent, entropy_coef))
    clipped = int(np.count_nonzero(np.abs(ratio.data[mask] - 1.0) > clip_eps))
    return loss, {"surrogate": surrogate.item(), "entropy": ent_val, "clipped": clipped,
                  "count": int(mask.sum())}


def value_loss(new_values, old_values, returns, mask=None, clip_eps=0.2, loss_kind="huber",
               huber_delta=10.0, count=None, use_clip=True):
    """max(l(V - R), l(clip(V, V_old - eps, V_old + eps) - R)) averaged over the mask."""
    new_values = T.as_tensor(new_values)
    old = np.asarray(old_values, dtype=np.float64)
    ret = np.asarray(returns, dtype=np.float64)
    mask = np.ones(new_values.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)

    def ell(v):
        if loss_kind == "huber":
            return T.huber(v, ret, huber_delta)
        if loss_kind == "squared":
            return T.square(T.sub(v, ret))
        raise ValueError(f"unknown value loss {loss_kind!r}")

    per = ell(new_values)
    if use_clip:
        clipped = T.add(old, T.clip(T.sub(new_values, old), -clip_eps, clip_eps))
        per = T.maximum(per, ell(clipped))
    return T.masked_mean(per, mask, count)


# ---------------------------------------------------------------- networks


class ActorCritic:
    """Separate actor and critic networks; one pair per agent without sharing."""

    def __init__(self, n_agents, obs_dim, state_dim, n_actions, cfg: TrainConfig, rng):
        self.n_agents = n_agents
        self.share = cfg.share_policy
        n_nets = 1 if cfg.share_policy else n_agents
        kw = dict(hidden_dim=cfg.hidden_dim, n_fc=cfg.n_fc, act=cfg.activation,
                  recurrent=cfg.recurrent, feature_norm=cfg.feature_norm, rng=rng)
        self.actors = [Network(obs_dim * cfg.stacked_frames, n_actions, out_gain=cfg.actor_gain, **kw)
                       for _ in range(n_nets)]
        self.critics = [Network(state_dim, 1, out_gain=1.0, **kw) for _ in range(n_nets)]
        self.hidden_dim = cfg.hidden_dim if cfg.recurrent else 0

    def net_index(self, agent):
        return 0 if self.share else int(agent)

    def named_parameters(self):
        for kind, nets in (("actor", self.actors), ("critic", self.critics)):
            for i, net in enumerate(nets):
                yield from net.named_parameters(f"{kind}.{i}.")

    def actor_parameters(self):
        return [p for net in self.actors for p in net.parameters()]

    def critic_parameters(self):
        return [p for net in self.critics for p in net.parameters()]

    def _groups(self, agents):
        if self.share:
            return [(0, np.arange(len(agents)))]
        return [(a, np.flatnonzero(agents == a)) for a in range(self.n_agents)
                if np.any(agents == a)]

    def act_rows(self, agents, obs, avail, h, rng, deterministic=False):
        """Sample actions for a flat batch of rows; ``agents[i]`` owns row i."""
        agents = np.asarray(agents)
        N = len(agents)
        actions = np.zeros(N, dtype=np.int64)
        logp = np.zeros(N)
        h_out = np.zeros((N, self.hidden_dim))
        for ni, rows in self._groups(agents):
            net = self.actors[ni]
            state = GruState(Tensor(h[rows])) if net.recurrent else None
            logits, st = net(obs[rows], state)
            dist = Categorical(logits, avail[rows])
            a = dist.mode() if deterministic else dist.sample(rng)
            actions[rows] = a
            logp[rows] = dist.log_probs.data[np.arange(len(rows)), a]
            if st is not None:
                h_out[rows] = st.hidden.data
        return actions, logp, h_out

    def value_rows(self, agents, states, h):
        agents = np.asarray(agents)
        N = len(agents)
        values = np.zeros(N)
        h_out = np.zeros((N, self.hidden_dim))
        for ni, rows in self._groups(agents):
            net = self.critics[ni]
            state = GruState(Tensor(h[rows])) if net.recurrent else None
            v, st = net(states[rows], state)
            values[rows] = v.data[:, 0]
            if st is not None:
                h_out[rows] = st.hidden.data
        return values, h_out


def _flat(x, E, A):
    return x.reshape((E * A,) + x.shape[2:])


class FrameStack:
    """Concatenate the last ``k`` observations (zeros before the episode start)."""

    def __init__(self, k, shape):
        self.k = k
        self.frames = np.zeros(shape[:-1] + (k * shape[-1],))
        self.D = shape[-1]

    def push(self, obs, resets):
        if self.k == 1:
            return obs
        self.frames[resets] = 0.0
        self.frames[..., :-self.D] = self.frames[..., self.D:].copy()
        self.frames[..., -self.D:] = obs
        return self.frames.copy()


# ---------------------------------------------------------------- collection


class Collector:
    """Owns the live env state between iterations and fills TrajectoryBatches."""

    def __init__(self, cfg: TrainConfig, vec: VecEnv, ac: ActorCritic, spec: StateSpec,
                 reward_moments: RunningMoments | None):
        self.cfg, self.vec, self.ac, self.spec = cfg, vec, ac, spec
        self.reward_moments = reward_moments
        d = vec.descriptor
        if d.turn_based and cfg.stacked_frames > 1:
            raise ConfigError("stacked_frames > 1 is not supported for turn-based environments")
        E, A = len(vec), d.n_agents
        self.E, self.A = E, A
        self.last = vec.reset()
        self.actor_h = np.zeros((E, A, ac.hidden_dim))
        self.critic_h = np.zeros((E, A, ac.hidden_dim))
        self.resets = np.ones((E, A), dtype=bool)
        self.frames = FrameStack(cfg.stacked_frames, (E, A, d.obs_dim))
        self.acc = TurnRewardAccumulator(E, A) if d.turn_based else None

    def _reward(self, r):
        if self.reward_moments is None:
            return r
        self.reward_moments.update(r)
        return self.reward_moments.scale(r)

    def _states(self, step):
        return build_states(self.spec, step.state, step.obs, step.alive, self.cfg.death_mode)

    def collect(self, rng):
        cfg, d = self.cfg, self.vec.descriptor
        b = TrajectoryBatch.empty(cfg.buffer_length, self.E, self.A,
                                  d.obs_dim * cfg.stacked_frames, self.spec.width, d.n_actions,
                                  self.ac.hidden_dim, self.ac.hidden_dim)
        episodes = []
        if d.turn_based:
            self._collect_turns(b, rng, episodes)
        else:
            self._collect_simultaneous(b, rng, episodes)
        vs = self._states(self.last)
        ch = np.where(self.resets[..., None], 0.0, self.critic_h)
        E, A = self.E, self.A
        agents = np.tile(np.arange(A), E)
        v, _ = self.ac.value_rows(agents, _flat(vs, E, A), _flat(ch, E, A))
        b.bootstrap_values = v.reshape(E, A)
        return b, episodes

    def _collect_simultaneous(self, b, rng, episodes):
        E, A = self.E, self.A
        agents = np.tile(np.arange(A), E)
        for t in range(b.T):
            last = self.last
            obs = self.frames.push(last.obs, self.resets)
            vs = self._states(last)
            ah = np.where(self.resets[..., None], 0.0, self.actor_h)
            ch = np.where(self.resets[..., None], 0.0, self.critic_h)
            act, logp, ah2 = self.ac.act_rows(agents, _flat(obs, E, A), _flat(last.avail, E, A),
                                              _flat(ah, E, A), rng)
            val, ch2 = self.ac.value_rows(agents, _flat(vs, E, A), _flat(ch, E, A))
            act = act.reshape(E, A)
            b.obs[t], b.value_state[t], b.actions[t] = obs, vs, act
            b.log_probs[t], b.values[t] = logp.reshape(E, A), val.reshape(E, A)
            b.alive[t], b.active[t], b.avail[t] = last.alive, True, last.avail
            b.resets[t], b.actor_h[t], b.critic_h[t] = self.resets, ah, ch
            nxt = self.vec.step(act)
            b.rewards[t] = self._reward(nxt.reward)[:, None]
            b.dones[t] = nxt.done[:, None]
            self.resets = np.repeat(nxt.done[:, None], A, axis=1)
            self.actor_h, self.critic_h = ah2.reshape(E, A, -1), ch2.reshape(E, A, -1)
            self.last = nxt
            episodes += nxt.episodes

    def _collect_turns(self, b, rng, episodes):
        """Round grid: in row t every player of every env moves once, in turn order.

        An env whose episode ends mid-round sits out the rest of the round;
        its next episode starts at row t + 1.
        """
        E, A = self.E, self.A
        envs = np.arange(E)
        for t in range(b.T):
            finished = np.zeros(E, dtype=bool)
            for k in range(A):
                last = self.last
                live = ~finished
                if live.any() and not np.all(last.acting[live] == k):
                    raise RuntimeError("turn order drifted out of the round grid")
                ids = np.full(E, k)
                ah = np.where(self.resets[:, k, None], 0.0, self.actor_h[:, k])
                ch = np.where(self.resets[:, k, None], 0.0, self.critic_h[:, k])
                vs = self._states(last)[:, k]
                act, logp, ah2 = self.ac.act_rows(ids, last.obs[:, k], last.avail[:, k], ah, rng)
                val, ch2 = self.ac.value_rows(ids, vs, ch)
                b.obs[t, :, k], b.value_state[t, :, k], b.actions[t, :, k] = last.obs[:, k], vs, act
                b.log_probs[t, :, k], b.values[t, :, k] = logp, val
                b.alive[t, :, k], b.active[t, :, k] = last.alive[:, k], live
                b.avail[t, :, k], b.resets[t, :, k] = last.avail[:, k], self.resets[:, k]
                b.actor_h[t, :, k], b.critic_h[t, :, k] = ah, ch
                actions = np.full((E, A), NO_ACTION)
                actions[live, k] = act[live]
                for e in envs[live]:
                    self.acc.open_window(e, k, t)
                nxt = self.vec.step(actions, env_mask=live)
                r = self._reward(nxt.reward[live])
                for e, re in zip(envs[live], r):
                    self.acc.credit(e, re, b.rewards)
                    if nxt.done[e]:
                        for p, slot in enumerate(self.acc.close_episode(e)):
                            if slot >= 0:
                                b.dones[slot, e, p] = True
                        finished[e] = True
                self.actor_h[live, k] = ah2[live]
                self.critic_h[live, k] = ch2[live]
                self.resets[live, k] = False
                self.last = nxt
                episodes += nxt.episodes
            self.resets[finished] = True
        self.acc.truncate()


# ---------------------------------------------------------------- trainer


class Trainer:
    """All mutable training state: networks, optimizers, statistics, RNGs, envs."""

    def __init__(self, cfg: TrainConfig, seeds: dict | None = None):
        self.cfg = cfg.validate()
        self.seeds = dict(seeds or derive_seeds(cfg.seed))
        self.vec = VecEnv.make(cfg.env, cfg.num_envs, self.seeds["env"], **cfg.env_params)
        d = self.descriptor = self.vec.descriptor
        if d.heterogeneous and cfg.share_policy:
            raise ConfigError(f"{d.name} has heterogeneous agents; set share_policy=false")
        self.spec = StateSpec(cfg.state_mode, d.n_agents, d.obs_dim, d.env_state_dim,
                              cfg.include_agent_id, d.fp_overlap_index)
        init_rng = np.random.default_rng(self.seeds["init"])
        self.ac = ActorCritic(d.n_agents, d.obs_dim, self.spec.width, d.n_actions, cfg, init_rng)
        self.actor_opt = Adam(self.ac.actor_parameters(), cfg.actor_lr, cfg.adam_eps, cfg.weight_decay)
        self.critic_opt = Adam(self.ac.critic_parameters(), cfg.critic_lr, cfg.adam_eps,
                               cfg.weight_decay)
        self.moments = RunningMoments() if cfg.use_value_norm else None
        self.reward_moments = RunningMoments() if cfg.use_reward_norm else None
        self.rng = np.random.default_rng(self.seeds["sample"])
        self.eval_rng = np.random.default_rng(self.seeds["eval"])
        self.collector = Collector(cfg, self.vec, self.ac, self.spec, self.reward_moments)
        self.iteration = 0
        self.env_steps = 0
        self.eval_scores = ScoreWindow(10)
        self.last_update = {}

    @property
    def done(self):
        return self.env_steps >= self.cfg.total_env_steps

    def train_iteration(self) -> dict:
        cfg = self.cfg
        batch, episodes = self.collector.collect(self.rng)
        batch = apply_death_handling(batch, cfg.death_mode, self.spec, cfg.gamma)
        adv = compute_gae(batch, cfg.gamma, cfg.gae_lambda, self.moments, update_moments=True,
                          normalize_advantages=cfg.normalize_advantages)
        stats = self.update(batch, adv)
        self.iteration += 1
        self.env_steps += cfg.steps_per_iteration
        if self.moments is not None:
            vmean, vstd = self.moments.mean, self.moments.std
        else:
            sel = adv.returns[batch.active]
            vmean, vstd = float(sel.mean()), float(sel.std())
        rets = [r for _, r, _ in episodes]
        wins = [w for _, _, w in episodes]
        row = {"step": self.env_steps, "iter": self.iteration,
               "mean_ep_reward": float(np.mean(rets)) if rets else math.nan,
               "win_rate": float(np.mean(wins)) if wins else math.nan,
               **stats, "value_mean": vmean, "value_std": vstd, "seconds": None}
        self.last_update = {"batch": batch, "advantages": adv}
        return {k: row[k] for k in METRIC_COLUMNS}

    def update(self, batch: TrajectoryBatch, adv) -> dict:
        cfg = self.cfg
        L = cfg.chunk_length if cfg.recurrent else batch.T
        chunks = split_chunks(batch, L)
        arrays = {"obs": batch.obs, "value_state": batch.value_state, "actions": batch.actions,
                  "log_probs": batch.log_probs, "values": batch.values, "avail": batch.avail,
                  "resets": batch.resets, "actor_h": batch.actor_h, "critic_h": batch.critic_h,
                  "policy_mask": batch.policy_mask, "active": batch.active,
                  "advantages": adv.advantages, "targets": adv.targets}
        view = _ArrayView(arrays)
        acc = defaultdict(float)
        n_updates = 0
        for _ in range(cfg.ppo_epochs):
            for mb in sample_minibatches(chunks, cfg.num_minibatches, self.rng):
                s = self._minibatch_step(view, mb)
                for k, v in s.items():
                    acc[k] += v
                n_updates += 1
        clipped, counted = acc.pop("clipped"), acc.pop("count")
        out = {k: acc[k] / n_updates for k in ("policy_loss", "value_loss", "entropy",
                                               "grad_norm_actor", "grad_norm_critic")}
        out["clip_frac"] = clipped / counted if counted else 0.0
        return out

    def _minibatch_step(self, view, mb) -> dict:
        cfg = self.cfg
        groups = defaultdict(list)
        for c in mb:
            groups[(c.length, self.ac.net_index(c.agent))].append(c)
        data = {key: gather_chunks(view, cs, view.names) for key, cs in groups.items()}
        n_pol = sum(int(g["policy_mask"].sum()) for g in data.values())
        n_val = sum(int(g["active"].sum()) for g in data.values())
        stats = {"surrogate": 0.0, "entropy": 0.0, "clipped": 0, "count": 0}
        with T.tape():
            terms = []
            vloss_val = 0.0
            for (L, ni), g in sorted(data.items()):
                new_lp, ent = self._replay_actor(self.ac.actors[ni], g, L)
                if n_pol:
                    pl, st = policy_loss(new_lp, g["log_probs"], g["advantages"], g["policy_mask"],
                                         cfg.clip_epsilon, ent, cfg.entropy_coef, count=n_pol)
                    terms.append(pl)
                    for k in stats:
                        stats[k] += st[k]
                if n_val:
                    new_v = self._replay_critic(self.ac.critics[ni], g, L)
                    vl = value_loss(new_v, g["values"], g["targets"], g["active"], cfg.clip_epsilon,
                                    cfg.value_loss, cfg.huber_delta, count=n_val,
                                    use_clip=cfg.use_value_clip)
                    vloss_val += vl.item()
                    terms.append(vl)
            if not terms:
                return {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clipped": 0,
                        "count": 0, "grad_norm_actor": 0.0, "grad_norm_critic": 0.0}
            total = terms[0]
            for term in terms[1:]:
                total = T.add(total, term)
            if not math.isfinite(total.item()):
                raise NonFiniteError(f"non-finite loss at iteration {self.iteration}")
            self.actor_opt.zero_grad()
            self.critic_opt.zero_grad()
            T.backward(total)
        a_params, c_params = self.actor_opt.params, self.critic_opt.params
        gn_a, gn_c = grad_norm(a_params), grad_norm(c_params)
        clip_grad_norm(a_params, cfg.max_grad_norm)
        clip_grad_norm(c_params, cfg.max_grad_norm)
        self.actor_opt.step()
        self.critic_opt.step()
        return {"policy_loss": -stats["surrogate"], "value_loss": vloss_val,
                "entropy": stats["entropy"], "clipped": stats["clipped"], "count": stats["count"],
                "grad_norm_actor": gn_a, "grad_norm_critic": gn_c}

    @staticmethod
    def _replay_actor(net, g, L):
        h = GruState(Tensor(g["actor_h"][0])) if net.recurrent else None
        logps, ents = [], []
        for l in range(L):
            logits, h = net(g["obs"][l], h, g["resets"][l] if h is not None else None)
            dist = Categorical(logits, g["avail"][l])
            logps.append(dist.log_prob(g["actions"][l]))
            ents.append(dist.entropy())
        return T.stack(logps), T.stack(ents)

    @staticmethod
    def _replay_critic(net, g, L):
        h = GruState(Tensor(g["critic_h"][0])) if net.recurrent else None
        vals = []
        for l in range(L):
            v, h = net(g["value_state"][l], h, g["resets"][l] if h is not None else None)
            vals.append(T.reshape(v, (v.shape[0],)))
        return T.stack(vals)

    def evaluate(self, episodes=None, deterministic=None) -> dict:
        cfg = self.cfg
        seed = int(self.eval_rng.integers(2 ** 63))
        return evaluate(self.ac, cfg, episodes or cfg.eval_episodes,
                        np.random.default_rng(seed), cfg.eval_deterministic
                        if deterministic is None else deterministic, env_seed=seed)


class _ArrayView:
    """Duck-types the attribute access :func:`gather_chunks` performs on a batch."""

    def __init__(self, arrays):
        self.__dict__.update(arrays)
        self.names = tuple(arrays)


def train_iteration(trainer: Trainer) -> dict:
    return trainer.train_iteration()


# ---------------------------------------------------------------- evaluation


def evaluate(ac: ActorCritic, cfg: TrainConfig, episodes: int, rng, deterministic=True,
             env_seed=0) -> dict:
    """Run exactly ``episodes`` full episodes without learning.

    Returns mean episode reward, win rate and the per-episode returns.
    """
    vec = VecEnv.make(cfg.env, episodes, env_seed, **cfg.env_params)
    d = vec.descriptor
    E, A = episodes, d.n_agents
    last = vec.reset()
    h = np.zeros((E, A, ac.hidden_dim))
    frames = FrameStack(cfg.stacked_frames, (E, A, d.obs_dim))
    resets = np.ones((E, A), dtype=bool)
    returns = np.zeros(E)
    wins = np.zeros(E, dtype=bool)
    finished = np.zeros(E, dtype=bool)
    agents = np.tile(np.arange(A), E)
    while not finished.all():
        if d.turn_based:
            k_of = last.acting
            actions = np.full((E, A), NO_ACTION)
            rows = np.flatnonzero(~finished)
            act, _, h2 = ac.act_rows(k_of[rows], last.obs[rows, k_of[rows]],
                                     last.avail[rows, k_of[rows]], h[rows, k_of[rows]], rng,
                                     deterministic)
            actions[rows, k_of[rows]] = act
            h[rows, k_of[rows]] = h2
        else:
            obs = frames.push(last.obs, resets)
            act, _, h2 = ac.act_rows(agents, _flat(obs, E, A), _flat(last.avail, E, A),
                                     _flat(h, E, A), rng, deterministic)
            actions = act.reshape(E, A)
            h = h2.reshape(E, A, -1)
            resets[:] = False
        nxt = vec.step(actions, env_mask=~finished)
        for e, ret, win in nxt.episodes:
            returns[e], wins[e], finished[e] = ret, win, True
        last = nxt
    return {"mean_reward": float(returns.mean()), "win_rate": float(wins.mean()),
            "episodes": E, "returns": returns}


class ScoreWindow:
    """Keeps the most recent ``window`` evaluation scores and reports their median."""

    def __init__(self, window=10):
        self.window = window
        self.scores: list[float] = []

    def add(self, score: float):
        self.scores.append(float(score))
        self.scores = self.scores[-self.window:]

    def median(self) -> float:
        return float(np.median(self.scores)) if self.scores else math.nan


def aggregate_last(scores, window=10) -> float:
    w = ScoreWindow(window)
    for s in scores:
        w.add(s)
    return w.median()


def make_descriptor(cfg: TrainConfig):
    return make_env(cfg.env, seed=0, **cfg.env_params).descriptor
