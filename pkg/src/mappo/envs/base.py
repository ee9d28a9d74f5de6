from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EnvDescriptor:
    name: str
    n_agents: int
    obs_dim: int
    env_state_dim: int
    n_actions: int
    episode_limit: int
    fp_overlap_index: tuple = ()
    has_deaths: bool = False
    turn_based: bool = False
    heterogeneous: bool = False

    def as_dict(self):
        d = dict(self.__dict__)
        d["fp_overlap_index"] = list(self.fp_overlap_index)
        return d


@dataclass
class EnvStep:
    """One environment transition as seen by all agents.

    ``reward`` is the single shared team reward.  ``state`` is None for
    environments without a native global state.  ``acting`` names the agent to
    move next in turn-based games (-1 otherwise).
    """

    obs: np.ndarray
    state: np.ndarray | None
    reward: float
    done: bool
    alive: np.ndarray
    avail: np.ndarray
    info: dict = field(default_factory=dict)
    acting: int = -1


class MultiAgentEnv:
    descriptor: EnvDescriptor

    def reset(self) -> EnvStep:
        raise NotImplementedError

    def step(self, actions) -> EnvStep:
        raise NotImplementedError

    def _check_actions(self, actions, avail):
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (self.descriptor.n_agents,):
            raise ValueError(f"expected {self.descriptor.n_agents} actions, got shape {actions.shape}")
        rows = np.arange(len(actions))
        if np.any(actions < 0) or np.any(actions >= self.descriptor.n_actions) \
                or not np.all(avail[rows, actions]):
            raise ValueError(f"unavailable action in {actions.tolist()}")
        return actions


_REGISTRY = {}


def register(name):
    def deco(factory):
        _REGISTRY[name] = factory
        return factory
    return deco


def make_env(name: str, seed: int = 0, **params) -> MultiAgentEnv:
    """Construct a registered environment by name (spread, reference, comm, turnchain, skirmish, bandit)."""
    from . import bandit, comm, skirmish, spread, turnchain  # noqa: F401  (registration)
    if name not in _REGISTRY:
        raise KeyError(f"unknown environment {name!r}; known: {sorted(_REGISTRY)}")
    return _REGISTRY[name](seed=seed, **params)


def env_names():
    from . import bandit, comm, skirmish, spread, turnchain  # noqa: F401
    return sorted(_REGISTRY)


@dataclass
class VecStep:
    obs: np.ndarray        # [E, A, D]
    state: np.ndarray      # [E, S]  (S == 0 when absent)
    reward: np.ndarray     # [E]
    done: np.ndarray       # [E]
    alive: np.ndarray      # [E, A]
    avail: np.ndarray      # [E, A, nA]
    acting: np.ndarray     # [E]
    episodes: list         # (env index, return, win) for episodes finished this step


class VecEnv:
    """Steps independent environment instances and resets them on episode end.

    Each instance owns its RNG stream, so results do not depend on how many
    instances run or in which order they are stepped.
    """

    def __init__(self, envs):
        self.envs = list(envs)
        self.descriptor = self.envs[0].descriptor
        self._last: list[EnvStep] = []
        self._returns = np.zeros(len(self.envs))

    @classmethod
    def make(cls, name, num_envs, seed, **params):
        ss = np.random.SeedSequence(seed)
        seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(num_envs)]
        return cls([make_env(name, seed=s, **params) for s in seeds])

    def __len__(self):
        return len(self.envs)

    def reset(self) -> VecStep:
        self._last = [env.reset() for env in self.envs]
        self._returns[:] = 0.0
        return self._stack(self._last, np.zeros(len(self.envs)), [])

    def step(self, actions, env_mask=None) -> VecStep:
        """Step the envs selected by ``env_mask`` (all by default); others report reward 0."""
        actions = np.asarray(actions)
        rewards = np.zeros(len(self.envs))
        done = np.zeros(len(self.envs), dtype=bool)
        episodes = []
        for e, env in enumerate(self.envs):
            if env_mask is not None and not env_mask[e]:
                continue
            st = env.step(actions[e])
            rewards[e] = st.reward
            self._returns[e] += st.reward
            if st.done:
                done[e] = True
                episodes.append((e, float(self._returns[e]), bool(st.info.get("win", False))))
                self._returns[e] = 0.0
                st = env.reset()
            self._last[e] = st
        out = self._stack(self._last, rewards, episodes)
        out.done = done
        return out

    def _stack(self, steps, rewards, episodes) -> VecStep:
        d = self.descriptor
        state = (np.stack([s.state for s in steps]) if d.env_state_dim
                 else np.zeros((len(steps), 0)))
        return VecStep(
            obs=np.stack([s.obs for s in steps]),
            state=state,
            reward=np.asarray(rewards, dtype=np.float64),
            done=np.zeros(len(steps), dtype=bool),
            alive=np.stack([s.alive for s in steps]),
            avail=np.stack([s.avail for s in steps]),
            acting=np.array([s.acting for s in steps]),
            episodes=episodes,
        )
