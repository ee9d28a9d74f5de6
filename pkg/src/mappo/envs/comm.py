"""Communication tasks in the particle world.

comm (speaker-listener): agent 0 sees the goal colour and can only emit one of
``n_symbols`` symbols; agent 1 hears last step's symbol, sees landmarks and
moves.  Shared reward: -distance(listener, goal).  The two roles differ, so
observations are zero-padded to a common width and the speaker's action set is
restricted with the availability mask.

reference: two movers, each seeing only the *other* agent's goal colour.  An
action is a (move, symbol) pair.  Shared reward: -(d(a0, g0) + d(a1, g1)).
"""

from __future__ import annotations

import numpy as np

from .base import EnvDescriptor, EnvStep, MultiAgentEnv, register
from .spread import EPISODE_LIMIT, HALF_WIDTH, MOVES, integrate

N_LANDMARKS = 3
GOAL_RADIUS = 0.15


def _one_hot(i, n):
    v = np.zeros(n)
    if i >= 0:
        v[i] = 1.0
    return v


class CommEnv(MultiAgentEnv):
    SPEAKER, LISTENER = 0, 1

    def __init__(self, seed=0, n_symbols=N_LANDMARKS, episode_limit=EPISODE_LIMIT):
        if n_symbols > len(MOVES):
            raise ValueError(f"at most {len(MOVES)} symbols fit the shared action space")
        self.rng = np.random.default_rng(seed)
        self.n_symbols = n_symbols
        self.listener_dim = 2 + 2 * N_LANDMARKS + n_symbols
        self.descriptor = EnvDescriptor("comm", 2, self.listener_dim, 0, len(MOVES),
                                        episode_limit, heterogeneous=True)
        self.avail = np.zeros((2, len(MOVES)), dtype=bool)
        self.avail[self.SPEAKER, :n_symbols] = True
        self.avail[self.LISTENER, :] = True

    def reset(self) -> EnvStep:
        self.landmarks = self.rng.uniform(-HALF_WIDTH, HALF_WIDTH, (N_LANDMARKS, 2))
        self.goal = int(self.rng.integers(N_LANDMARKS))
        self.pos = self.rng.uniform(-HALF_WIDTH, HALF_WIDTH, 2)
        self.vel = np.zeros(2)
        self.heard = -1
        self.t = 0
        return self._record(0.0, False, {})

    def distance(self) -> float:
        return float(np.linalg.norm(self.pos - self.landmarks[self.goal]))

    def step(self, actions) -> EnvStep:
        actions = self._check_actions(actions, self.avail)
        p, v = integrate(self.pos[None], self.vel[None], actions[self.LISTENER:])
        self.pos, self.vel = p[0], v[0]
        self.heard = int(actions[self.SPEAKER])
        self.t += 1
        done = self.t >= self.descriptor.episode_limit
        info = {"win": self.distance() < GOAL_RADIUS} if done else {}
        return self._record(-self.distance(), done, info)

    def observe(self):
        obs = np.zeros((2, self.listener_dim))
        obs[self.SPEAKER, :N_LANDMARKS] = _one_hot(self.goal, N_LANDMARKS)
        obs[self.LISTENER] = np.concatenate([self.vel, (self.landmarks - self.pos).reshape(-1),
                                             _one_hot(self.heard, self.n_symbols)])
        return obs

    def _record(self, reward, done, info):
        return EnvStep(self.observe(), None, reward, done, np.ones(2, dtype=bool),
                       self.avail.copy(), info)


class ReferenceEnv(MultiAgentEnv):
    def __init__(self, seed=0, n_symbols=N_LANDMARKS, episode_limit=EPISODE_LIMIT):
        self.rng = np.random.default_rng(seed)
        self.n_symbols = n_symbols
        obs_dim = 2 + 2 * N_LANDMARKS + N_LANDMARKS + n_symbols
        self.descriptor = EnvDescriptor("reference", 2, obs_dim, 0, len(MOVES) * n_symbols,
                                        episode_limit)

    def reset(self) -> EnvStep:
        self.landmarks = self.rng.uniform(-HALF_WIDTH, HALF_WIDTH, (N_LANDMARKS, 2))
        self.goals = self.rng.integers(N_LANDMARKS, size=2)
        self.pos = self.rng.uniform(-HALF_WIDTH, HALF_WIDTH, (2, 2))
        self.vel = np.zeros((2, 2))
        self.heard = np.array([-1, -1])
        self.t = 0
        return self._record(0.0, False, {})

    def decode(self, action):
        """Joint action id -> (move, symbol)."""
        return action // self.n_symbols, action % self.n_symbols

    def distances(self):
        return np.linalg.norm(self.pos - self.landmarks[self.goals], axis=-1)

    def step(self, actions) -> EnvStep:
        avail = np.ones((2, self.descriptor.n_actions), dtype=bool)
        actions = self._check_actions(actions, avail)
        moves, symbols = self.decode(actions)
        self.pos, self.vel = integrate(self.pos, self.vel, moves)
        self.heard = symbols[::-1].copy()
        self.t += 1
        done = self.t >= self.descriptor.episode_limit
        d = self.distances()
        info = {"win": bool(np.all(d < GOAL_RADIUS))} if done else {}
        return self._record(-float(d.sum()), done, info)

    def observe(self):
        obs = []
        for i in range(2):
            obs.append(np.concatenate([self.vel[i], (self.landmarks - self.pos[i]).reshape(-1),
                                       _one_hot(self.goals[1 - i], N_LANDMARKS),
                                       _one_hot(self.heard[i], self.n_symbols)]))
        return np.stack(obs)

    def _record(self, reward, done, info):
        return EnvStep(self.observe(), None, reward, done, np.ones(2, dtype=bool),
                       np.ones((2, self.descriptor.n_actions), dtype=bool), info)


@register("comm")
def comm_env(seed=0, **kw) -> CommEnv:
    return CommEnv(seed=seed, **kw)


@register("reference")
def reference_env(seed=0, **kw) -> ReferenceEnv:
    return ReferenceEnv(seed=seed, **kw)
