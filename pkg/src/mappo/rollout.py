"""Trajectory storage, GAE, death handling, BPTT chunking and mini-batching.

All per-step arrays are time-major ``[T, E, A, ...]`` (buffer length, envs,
agents).  Three boolean masks travel with the data:

``dones``   the transition at t ends the episode for this agent (no bootstrap
            through it).  The env-level done is copied to every agent; drop
            mode additionally terminates an agent at its death step.
``alive``   the agent was alive when it acted at t.  Dead steps never enter
            the policy loss.
``active``  the entry is a real transition.  False for turn-based players
            that did not get a turn in that round and for dropped post-death
            steps.  Inactive entries enter no loss at all.

``resets[t]`` marks the first step of an episode: the recurrent state fed at t
is zero.  ``actor_h[t]`` / ``critic_h[t]`` hold the hidden state actually fed
to the networks at step t (already zeroed on reset rows).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, fields

import numpy as np

from .statebuild import DEATH_MODES, StateSpec
from .valuenorm import RunningMoments

ADV_EPS = 1e-8


@dataclass
class TrajectoryBatch:
    obs: np.ndarray            # [T, E, A, D]
    value_state: np.ndarray    # [T, E, A, W]
    actions: np.ndarray        # [T, E, A] int
    log_probs: np.ndarray      # [T, E, A]
    values: np.ndarray         # [T, E, A] critic output (normalized space)
    rewards: np.ndarray        # [T, E, A]
    dones: np.ndarray          # [T, E, A] bool
    alive: np.ndarray          # [T, E, A] bool
    active: np.ndarray         # [T, E, A] bool
    avail: np.ndarray          # [T, E, A, nA] bool
    resets: np.ndarray         # [T, E, A] bool
    actor_h: np.ndarray        # [T, E, A, Ha]
    critic_h: np.ndarray       # [T, E, A, Hc]
    bootstrap_values: np.ndarray | None = None   # [E, A]

    @classmethod
    def empty(cls, T, E, A, obs_dim, state_dim, n_actions, actor_hidden=0, critic_hidden=0):
        f = lambda *s: np.zeros((T, E, A) + s)  # noqa: E731
        b = lambda *s: np.zeros((T, E, A) + s, dtype=bool)  # noqa: E731
        return cls(obs=f(obs_dim), value_state=f(state_dim),
                   actions=np.zeros((T, E, A), dtype=np.int64), log_probs=f(), values=f(),
                   rewards=f(), dones=b(), alive=b(), active=b(), avail=b(n_actions),
                   resets=b(), actor_h=f(actor_hidden), critic_h=f(critic_hidden))

    @property
    def T(self):
        return self.actions.shape[0]

    @property
    def E(self):
        return self.actions.shape[1]

    @property
    def A(self):
        return self.actions.shape[2]

    def copy(self) -> "TrajectoryBatch":
        return TrajectoryBatch(**{f.name: None if getattr(self, f.name) is None
                                  else getattr(self, f.name).copy() for f in fields(self)})

    @property
    def policy_mask(self):
        return self.alive & self.active


@dataclass
class AdvantageSet:
    advantages: np.ndarray       # whitened over policy_mask entries
    raw_advantages: np.ndarray   # before whitening
    returns: np.ndarray          # R̂ = Â + V, raw reward scale
    targets: np.ndarray          # R̂ in normalized space (critic regression target)
    values: np.ndarray           # denormalized V(s_t) used for the deltas


def gae(rewards, values, next_values, dones, gamma, lam):
    """Recursive GAE over axis 0.

    ``next_values[t]`` is V(s_{t+1}) for the transition at t; it is ignored
    where ``dones[t]``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    not_done = 1.0 - np.asarray(dones, dtype=np.float64)
    deltas = rewards + gamma * not_done * next_values - values
    adv = np.zeros_like(deltas)
    running = np.zeros_like(deltas[0])
    for t in range(len(deltas) - 1, -1, -1):
        running = deltas[t] + gamma * lam * not_done[t] * running
        adv[t] = running
    return adv


def whiten(x, mask):
    """Standardize ``x`` using statistics over ``mask`` entries only."""
    mask = np.asarray(mask, dtype=bool)
    sel = x[mask]
    if sel.size == 0:
        return np.zeros_like(x)
    mu = sel.mean()
    sd = sel.std() if sel.size > 1 else 1.0
    return (x - mu) / max(sd, ADV_EPS)


def compute_gae(batch: TrajectoryBatch, gamma: float, lam: float,
                moments: RunningMoments | None = None, update_moments: bool = False,
                normalize_advantages: bool = True) -> AdvantageSet:
    """Advantages and reward-to-go for every entry of the batch.

    Stored values (and the bootstrap) are denormalized with ``moments`` as they
    stand on entry.  With ``update_moments`` the statistics are then refreshed
    on the returns of all active entries before the critic targets are
    normalized.
    """
    if batch.bootstrap_values is None:
        raise ValueError("compute_gae: batch has no bootstrap values")
    den = (lambda v: v) if moments is None else moments.denormalize
    values = den(batch.values)
    boot = den(batch.bootstrap_values)
    next_values = np.concatenate([values[1:], boot[None]], axis=0)
    adv = gae(batch.rewards, values, next_values, batch.dones, gamma, lam)
    returns = adv + values
    if moments is not None and update_moments:
        moments.update(returns[batch.active])
    targets = returns if moments is None else moments.normalize(returns)
    whitened = whiten(adv, batch.policy_mask) if normalize_advantages else adv
    return AdvantageSet(whitened, adv, returns, targets, values)


# ---------------------------------------------------------------- death handling


def apply_death_handling(batch: TrajectoryBatch, mode: str, spec: StateSpec | None = None,
                         gamma: float = 0.99) -> TrajectoryBatch:
    """Return a copy of the batch prepared for one of the four death variants.

    mask / mask_no_id  dead steps get the constant critic input (zeros plus,
                       for ``mask``, the one-hot agent ID); transitions kept.
    keep               unchanged.
    drop               each agent's episode ends at its last living step d; the
                       reward there becomes sum_{t>=d} gamma^(t-d) r_t up to the
                       episode end (or the buffer end), later steps are made
                       inactive.
    """
    if mode not in DEATH_MODES:
        raise ValueError(f"unknown death mode {mode!r}; expected one of {DEATH_MODES}")
    out = batch.copy()
    if mode == "keep" or out.alive.all():
        return out
    if mode in ("mask", "mask_no_id"):
        if spec is None:
            raise ValueError("death masking needs the StateSpec to know the ID block")
        dead = ~out.alive
        out.value_state[dead] = 0.0
        if mode == "mask" and spec.include_agent_id:
            ids = np.broadcast_to(np.eye(out.A), out.value_state.shape[:3] + (out.A,))
            out.value_state[..., spec.base_width:][dead] = ids[dead]
        return out
    T = out.T
    ep_done = batch.dones
    for e in range(out.E):
        for a in range(out.A):
            alive, done, r = batch.alive[:, e, a], ep_done[:, e, a], batch.rewards[:, e, a]
            t = 0
            while t < T:
                if not alive[t]:
                    # dead since before this buffer: nothing left to learn from
                    out.active[t, e, a] = False
                    t += 1
                    continue
                if t + 1 < T and not done[t] and not alive[t + 1]:
                    u = t + 1
                    while u < T - 1 and not done[u]:
                        u += 1
                    disc = gamma ** np.arange(u - t + 1)
                    out.rewards[t, e, a] = float(np.dot(disc, r[t:u + 1]))
                    out.dones[t, e, a] = True
                    out.active[t + 1:u + 1, e, a] = False
                    t = u + 1
                    continue
                t += 1
    return out


# ---------------------------------------------------------------- chunks


@dataclass(frozen=True)
class Chunk:
    """One agent's contiguous slice [t0, t0 + length) of one env's trajectory."""

    t0: int
    length: int
    env: int
    agent: int

    def rows(self):
        return slice(self.t0, self.t0 + self.length)

    def initial_state(self, batch: TrajectoryBatch):
        return batch.actor_h[self.t0, self.env, self.agent], batch.critic_h[self.t0, self.env, self.agent]

    def take(self, batch: TrajectoryBatch, name: str):
        return getattr(batch, name)[self.rows(), self.env, self.agent]


def chunk_bounds(T: int, L: int):
    if L < 1:
        raise ValueError("chunk length must be >= 1")
    return [(t0, min(L, T - t0)) for t0 in range(0, T, L)]


def split_chunks(batch: TrajectoryBatch, L: int) -> list[Chunk]:
    """Partition every (env, agent) trajectory into ceil(T/L) time chunks."""
    return [Chunk(t0, n, e, a) for t0, n in chunk_bounds(batch.T, L)
            for e in range(batch.E) for a in range(batch.A)]


def sample_minibatches(chunks, num_minibatches: int, rng) -> list[list]:
    """Shuffle chunks and deal them into ``num_minibatches`` near-equal groups."""
    if num_minibatches < 1:
        raise ValueError("num_minibatches must be >= 1")
    if num_minibatches > len(chunks):
        raise ValueError(f"{num_minibatches} mini-batches requested but only {len(chunks)} chunks")
    perm = rng.permutation(len(chunks))
    return [[chunks[i] for i in part] for part in np.array_split(perm, num_minibatches)]


def gather_chunks(batch: TrajectoryBatch, chunks, names):
    """Stack equal-length chunks into ``[L, B, ...]`` arrays for each named field."""
    L = chunks[0].length
    if any(c.length != L for c in chunks):
        raise ValueError("gather_chunks needs chunks of one length")
    t = np.array([c.t0 for c in chunks])[None, :] + np.arange(L)[:, None]
    e = np.array([c.env for c in chunks])[None, :]
    a = np.array([c.agent for c in chunks])[None, :]
    return {name: getattr(batch, name)[t, e, a] for name in names}


# ---------------------------------------------------------------- trajectory dump

DUMP_MAGIC = b"MAPPOTRJ"
DUMP_VERSION = 1


def dump_trajectory(path, batch: TrajectoryBatch, extra: dict | None = None):
    """Self-describing binary: magic, version, JSON header, then raw arrays.

    Floats are little-endian fp64, integer and boolean fields little-endian int32.
    """
    arrays, meta = [], []
    for f in fields(batch):
        arr = getattr(batch, f.name)
        if arr is None:
            continue
        if arr.dtype == np.float64:
            data, kind = arr.astype("<f8"), "f8"
        else:
            data, kind = arr.astype("<i4"), "bool" if arr.dtype == bool else "i4"
        meta.append({"name": f.name, "dtype": kind, "shape": list(arr.shape)})
        arrays.append(data)
    header = json.dumps({"dims": {"T": batch.T, "E": batch.E, "A": batch.A},
                         "fields": meta, "extra": extra or {}}).encode()
    with open(path, "wb") as fh:
        fh.write(DUMP_MAGIC)
        fh.write(struct.pack("<II", DUMP_VERSION, len(header)))
        fh.write(header)
        for data in arrays:
            fh.write(np.ascontiguousarray(data).tobytes())


def load_trajectory(path) -> tuple[TrajectoryBatch, dict]:
    with open(path, "rb") as fh:
        if fh.read(len(DUMP_MAGIC)) != DUMP_MAGIC:
            raise ValueError(f"{path}: not a trajectory dump")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != DUMP_VERSION:
            raise ValueError(f"{path}: unsupported dump version {version}")
        header = json.loads(fh.read(hlen))
        out = {}
        for m in header["fields"]:
            dt = np.dtype("<f8") if m["dtype"] == "f8" else np.dtype("<i4")
            n = int(np.prod(m["shape"])) if m["shape"] else 1
            arr = np.frombuffer(fh.read(n * dt.itemsize), dtype=dt).reshape(m["shape"])
            if m["dtype"] == "bool":
                arr = arr.astype(bool)
            elif m["dtype"] == "i4":
                arr = arr.astype(np.int64)
            else:
                arr = arr.astype(np.float64)
            out[m["name"]] = arr
    return TrajectoryBatch(**out), header["extra"]
