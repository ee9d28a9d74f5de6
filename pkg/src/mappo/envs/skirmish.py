"""Skirmish: a small grid battle standing in for StarCraft-style micromanagement.

This is a proxy for the death / available-action mechanics only, not a
reproduction of any StarCraft map.

Allies (the learners) start on the left edge, scripted enemies on the right.
Allies shoot at Chebyshev range ``ally_range``; after firing, a weapon needs a
random 0..``max_cooldown`` steps to recharge, which is visible to the agent
only through its available-action mask.  Enemies attack the weakest ally in
melee range, otherwise step toward the closest ally.

Actions: 0 stay, 1-4 move (+x, -x, +y, -y), 4+j attack enemy j.
Shared reward: damage dealt this step, plus ``win_bonus`` when the last enemy
falls.  A dead ally is flagged not alive, observes zeros, and may only stay.

The global state lists position and health of every unit plus the time
fraction; it has no agent IDs and no availability information.  The enemy
health block and the time fraction are duplicated verbatim in every local
observation and are declared as ``fp_overlap_index``.
"""

from __future__ import annotations

import numpy as np

from .base import EnvDescriptor, EnvStep, MultiAgentEnv, register

MOVES = np.array([[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]])


def cheb(a, b):
    return np.abs(np.asarray(a) - np.asarray(b)).max(axis=-1)


class SkirmishEnv(MultiAgentEnv):
    def __init__(self, n_allies=3, n_enemies=3, seed=0, width=8, height=6, ally_hp=3,
                 enemy_hp=3, ally_range=2, enemy_range=1, sight=4, max_cooldown=2,
                 win_bonus=10.0, episode_limit=40):
        if n_allies < 1 or n_enemies < 1:
            raise ValueError("skirmish needs at least one unit per side")
        self.na, self.ne = n_allies, n_enemies
        self.W, self.Hgt = width, height
        self.ally_hp, self.enemy_hp = ally_hp, enemy_hp
        self.ally_range, self.enemy_range, self.sight = ally_range, enemy_range, sight
        self.max_cooldown, self.win_bonus = max_cooldown, win_bonus
        self.rng = np.random.default_rng(seed)
        self.n_actions = len(MOVES) + n_enemies
        obs_dim = 3 + self.n_actions + 4 * n_enemies + 4 * (n_allies - 1) + n_enemies + 1
        state_dim = 3 * n_allies + 3 * n_enemies + 1
        overlap = tuple(3 * n_allies + 3 * j + 2 for j in range(n_enemies)) + (state_dim - 1,)
        self.descriptor = EnvDescriptor("skirmish", n_allies, obs_dim, state_dim, self.n_actions,
                                        episode_limit, fp_overlap_index=overlap, has_deaths=True)

    # ------------------------------------------------------------------ dynamics

    def reset(self) -> EnvStep:
        self.ally_pos = np.stack([self.rng.integers(0, 2, self.na),
                                  self.rng.integers(0, self.Hgt, self.na)], axis=1)
        self.enemy_pos = np.stack([self.rng.integers(self.W - 2, self.W, self.ne),
                                   self.rng.integers(0, self.Hgt, self.ne)], axis=1)
        self.ally_hits = np.full(self.na, self.ally_hp)
        self.enemy_hits = np.full(self.ne, self.enemy_hp)
        self.cooldown = np.zeros(self.na, dtype=np.int64)
        self.t = 0
        return self._record(0.0, False, {})

    @property
    def alive(self):
        return self.ally_hits > 0

    def available(self) -> np.ndarray:
        avail = np.zeros((self.na, self.n_actions), dtype=bool)
        avail[:, 0] = True
        for i in np.flatnonzero(self.alive):
            for a in range(1, len(MOVES)):
                x, y = self.ally_pos[i] + MOVES[a]
                avail[i, a] = 0 <= x < self.W and 0 <= y < self.Hgt
            if self.cooldown[i] == 0:
                in_range = (self.enemy_hits > 0) & (cheb(self.enemy_pos, self.ally_pos[i])
                                                    <= self.ally_range)
                avail[i, len(MOVES):] = in_range
        return avail

    def step(self, actions) -> EnvStep:
        actions = self._check_actions(actions, self.available())
        reward = 0.0
        fired = np.zeros(self.na, dtype=bool)
        for i in np.flatnonzero(self.alive):
            a = actions[i]
            if 0 < a < len(MOVES):
                self.ally_pos[i] = self.ally_pos[i] + MOVES[a]
            elif a >= len(MOVES):
                j = a - len(MOVES)
                if self.enemy_hits[j] > 0:
                    self.enemy_hits[j] -= 1
                    reward += 1.0
                fired[i] = True
        for j in np.flatnonzero(self.enemy_hits > 0):
            live = np.flatnonzero(self.alive)
            if len(live) == 0:
                break
            d = cheb(self.ally_pos[live], self.enemy_pos[j])
            near = live[d <= self.enemy_range]
            if len(near):
                target = near[np.argmin(self.ally_hits[near])]
                self.ally_hits[target] -= 1
            else:
                target = live[np.argmin(d)]
                delta = self.ally_pos[target] - self.enemy_pos[j]
                axis = int(np.argmax(np.abs(delta)))
                self.enemy_pos[j, axis] += np.sign(delta[axis])
        self.cooldown = np.where(fired, self.rng.integers(0, self.max_cooldown + 1, self.na),
                                 np.maximum(self.cooldown - 1, 0))
        self.cooldown[~self.alive] = 0
        self.t += 1
        win = bool(np.all(self.enemy_hits <= 0))
        if win:
            reward += self.win_bonus
        done = win or not self.alive.any() or self.t >= self.descriptor.episode_limit
        return self._record(reward, done, {"win": win} if done else {})

    # ------------------------------------------------------------------ views

    def _norm_pos(self, p):
        return np.asarray(p, dtype=float) / np.array([self.W - 1, self.Hgt - 1])

    def observe(self) -> np.ndarray:
        avail = self.available()
        obs = np.zeros((self.na, self.descriptor.obs_dim))
        enemy_hp = np.clip(self.enemy_hits, 0, None) / max(self.enemy_hp, 1)
        for i in np.flatnonzero(self.alive):
            parts = [self._norm_pos(self.ally_pos[i]), [self.ally_hits[i] / self.ally_hp],
                     avail[i].astype(float)]
            for j in range(self.ne):
                parts.append(self._unit_view(i, self.enemy_pos[j], self.enemy_hits[j],
                                             max(self.enemy_hp, 1)))
            for k in range(self.na):
                if k != i:
                    parts.append(self._unit_view(i, self.ally_pos[k], self.ally_hits[k],
                                                 self.ally_hp))
            parts += [enemy_hp, [self.t / self.descriptor.episode_limit]]
            obs[i] = np.concatenate(parts)
        return obs

    def _unit_view(self, i, pos, hits, max_hits):
        if hits <= 0 or cheb(pos, self.ally_pos[i]) > self.sight:
            return np.zeros(4)
        d = (np.asarray(pos) - self.ally_pos[i]) / self.sight
        return np.array([1.0, d[0], d[1], hits / max_hits])

    def global_state(self) -> np.ndarray:
        parts = []
        for p, h, m in zip(self.ally_pos, self.ally_hits, [self.ally_hp] * self.na):
            parts += [self._norm_pos(p), [max(h, 0) / m]]
        for p, h in zip(self.enemy_pos, self.enemy_hits):
            parts += [self._norm_pos(p), [max(h, 0) / max(self.enemy_hp, 1)]]
        parts.append([self.t / self.descriptor.episode_limit])
        return np.concatenate(parts)

    def _record(self, reward, done, info):
        return EnvStep(self.observe(), self.global_state(), float(reward), done,
                       self.alive.copy(), self.available(), info)


@register("skirmish")
def skirmish_env(n_allies=3, n_enemies=3, seed=0, **kw) -> SkirmishEnv:
    return SkirmishEnv(n_allies=n_allies, n_enemies=n_enemies, seed=seed, **kw)


def random_policy(env: SkirmishEnv, rng):
    avail = env.available()
    return np.array([rng.choice(np.flatnonzero(a)) for a in avail])


def focus_fire_policy(env: SkirmishEnv, rng=None):
    """All allies shoot the weakest enemy they can reach, else close in on it."""
    avail = env.available()
    live_enemies = np.flatnonzero(env.enemy_hits > 0)
    actions = np.zeros(env.na, dtype=np.int64)
    if len(live_enemies) == 0:
        return actions
    focus = live_enemies[np.argmin(env.enemy_hits[live_enemies])]
    for i in np.flatnonzero(env.alive):
        shootable = np.flatnonzero(avail[i, len(MOVES):])
        if len(shootable):
            actions[i] = len(MOVES) + shootable[np.argmin(env.enemy_hits[shootable])]
            continue
        if cheb(env.enemy_pos[focus], env.ally_pos[i]) <= env.ally_range:
            continue  # reloading; hold position
        delta = env.enemy_pos[focus] - env.ally_pos[i]
        axis = int(np.argmax(np.abs(delta)))
        step = np.zeros(2, dtype=int)
        step[axis] = np.sign(delta[axis])
        move = int(np.flatnonzero((MOVES == step).all(axis=1))[0])
        actions[i] = move if avail[i, move] else 0
    return actions


def run_scripted(policy, episodes, seed, **env_kw):
    """Win rate and mean return of a scripted policy over seeded episodes."""
    rng = np.random.default_rng(seed)
    wins, returns = 0, []
    for k in range(episodes):
        env = SkirmishEnv(seed=seed * 100003 + k, **env_kw)
        env.reset()
        total = 0.0
        while True:
            st = env.step(policy(env, rng))
            total += st.reward
            if st.done:
                wins += bool(st.info.get("win"))
                returns.append(total)
                break
    return wins / episodes, float(np.mean(returns))
