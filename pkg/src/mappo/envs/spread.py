"""Cooperative navigation: n agents must cover n landmarks.

Physics follows the usual particle-world integration: per step the velocity
decays by ``DAMPING`` and gains ``ACCEL * DT`` along the chosen axis, then the
position advances by ``velocity * DT``.  Collisions are penalised but not
simulated as contact forces.

Shared reward per step: -(sum over landmarks of the distance to the closest
agent) - COLLISION_PENALTY * (number of overlapping agent pairs).
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .base import EnvDescriptor, EnvStep, MultiAgentEnv, register

DT = 0.1
DAMPING = 0.25
ACCEL = 5.0
AGENT_SIZE = 0.15
COLLISION_PENALTY = 1.0
HALF_WIDTH = 1.0
EPISODE_LIMIT = 25
COVER_RADIUS = 0.1

# no-op, +x, -x, +y, -y
MOVES = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


def integrate(pos, vel, actions):
    """One physics step for all agents; returns new (pos, vel)."""
    vel = vel * (1.0 - DAMPING) + ACCEL * DT * MOVES[actions]
    return pos + vel * DT, vel


class SpreadEnv(MultiAgentEnv):
    def __init__(self, n_agents=3, seed=0, episode_limit=EPISODE_LIMIT):
        if n_agents < 1:
            raise ValueError("spread needs at least one agent")
        self.n = n_agents
        self.rng = np.random.default_rng(seed)
        obs_dim = 4 + 2 * n_agents + 2 * (n_agents - 1)
        self.descriptor = EnvDescriptor("spread", n_agents, obs_dim, 0, len(MOVES), episode_limit)
        self.pos = self.vel = self.landmarks = None
        self.t = 0

    def reset(self) -> EnvStep:
        self.pos = self.rng.uniform(-HALF_WIDTH, HALF_WIDTH, (self.n, 2))
        self.vel = np.zeros((self.n, 2))
        self.landmarks = self.rng.uniform(-HALF_WIDTH, HALF_WIDTH, (self.n, 2))
        self.t = 0
        return self._step_record(0.0, False, {})

    def set_layout(self, pos, landmarks, vel=None):
        """Place agents and landmarks explicitly (testing / scripted scenarios)."""
        self.pos = np.array(pos, dtype=float).reshape(self.n, 2)
        self.landmarks = np.array(landmarks, dtype=float).reshape(-1, 2)
        self.vel = np.zeros((self.n, 2)) if vel is None else np.array(vel, dtype=float)
        self.t = 0
        return self._step_record(0.0, False, {})

    def reward(self) -> float:
        d = np.linalg.norm(self.landmarks[:, None, :] - self.pos[None, :, :], axis=-1)
        r = -d.min(axis=1).sum()
        if self.n > 1:
            pd = np.linalg.norm(self.pos[:, None] - self.pos[None, :], axis=-1)
            iu = np.triu_indices(self.n, 1)
            r -= COLLISION_PENALTY * np.count_nonzero(pd[iu] < 2 * AGENT_SIZE)
        return float(r)

    def covered(self) -> bool:
        d = np.linalg.norm(self.landmarks[:, None, :] - self.pos[None, :, :], axis=-1)
        return bool(np.all(d.min(axis=1) < COVER_RADIUS))

    def step(self, actions) -> EnvStep:
        avail = np.ones((self.n, len(MOVES)), dtype=bool)
        actions = self._check_actions(actions, avail)
        self.pos, self.vel = integrate(self.pos, self.vel, actions)
        self.t += 1
        done = self.t >= self.descriptor.episode_limit
        info = {"win": self.covered()} if done else {}
        return self._step_record(self.reward(), done, info)

    def observe(self) -> np.ndarray:
        obs = np.empty((self.n, self.descriptor.obs_dim))
        for i in range(self.n):
            others = np.delete(self.pos, i, axis=0) - self.pos[i]
            obs[i] = np.concatenate([self.vel[i], self.pos[i],
                                     (self.landmarks - self.pos[i]).reshape(-1),
                                     others.reshape(-1)])
        return obs

    def _step_record(self, reward, done, info) -> EnvStep:
        return EnvStep(self.observe(), None, reward, done, np.ones(self.n, dtype=bool),
                       np.ones((self.n, len(MOVES)), dtype=bool), info)


@register("spread")
def spread_env(n_agents=3, seed=0, **kw) -> SpreadEnv:
    return SpreadEnv(n_agents=n_agents, seed=seed, **kw)


def stopping_point(pos, vel):
    """Where each agent would coast to if it stopped applying force after this step."""
    return pos + vel * DT * (1.0 - DAMPING) / DAMPING


class AssignmentOracle:
    """Scripted spread policy: Hungarian agent-landmark matching plus straight-line
    braking control toward the matched landmark.

    Each step every agent picks the move whose post-step coasting point lands
    closest to its target.
    """

    def __init__(self, env: SpreadEnv):
        self.env = env
        self.targets = None

    def assign(self):
        d = np.linalg.norm(self.env.pos[:, None, :] - self.env.landmarks[None, :, :], axis=-1)
        rows, cols = linear_sum_assignment(d)
        self.targets = self.env.landmarks[cols[np.argsort(rows)]]

    def act(self) -> np.ndarray:
        if self.targets is None:
            self.assign()
        env = self.env
        best = np.zeros(env.n, dtype=np.int64)
        best_d = np.full(env.n, np.inf)
        for a in range(len(MOVES)):
            acts = np.full(env.n, a)
            p, v = integrate(env.pos, env.vel, acts)
            d = np.linalg.norm(stopping_point(p, v) - self.targets, axis=-1)
            better = d < best_d - 1e-12
            best[better] = a
            best_d[better] = d[better]
        return best


def oracle_episode_return(seed, n_agents=3) -> float:
    env = SpreadEnv(n_agents, seed=seed)
    env.reset()
    oracle = AssignmentOracle(env)
    total = 0.0
    while True:
        st = env.step(oracle.act())
        total += st.reward
        if st.done:
            return total


def random_episode_return(seed, n_agents=3) -> float:
    env = SpreadEnv(n_agents, seed=seed)
    env.reset()
    rng = np.random.default_rng(seed + 1)
    total = 0.0
    while True:
        st = env.step(rng.integers(0, len(MOVES), n_agents))
        total += st.reward
        if st.done:
            return total
