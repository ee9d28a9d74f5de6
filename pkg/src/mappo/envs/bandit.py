"""Single-state bandit: one step per episode, reward 1 for arm 0 and 0 for arm 1.

With several agents the shared reward is the fraction choosing arm 0; an
episode counts as a win when every agent picks arm 0.
"""

from __future__ import annotations

import numpy as np

from .base import EnvDescriptor, EnvStep, MultiAgentEnv, register


class BanditEnv(MultiAgentEnv):
    def __init__(self, n_agents=1, n_arms=2, seed=0):
        self.n = n_agents
        self.descriptor = EnvDescriptor("bandit", n_agents, 1, 0, n_arms, 1)

    def reset(self) -> EnvStep:
        return self._record(0.0, False, {})

    def step(self, actions) -> EnvStep:
        actions = self._check_actions(actions, np.ones((self.n, self.descriptor.n_actions), bool))
        hits = actions == 0
        return self._record(float(hits.mean()), True, {"win": bool(hits.all())})

    def _record(self, reward, done, info):
        return EnvStep(np.ones((self.n, 1)), None, reward, done, np.ones(self.n, dtype=bool),
                       np.ones((self.n, self.descriptor.n_actions), dtype=bool), info)


@register("bandit")
def bandit_env(seed=0, **kw) -> BanditEnv:
    return BanditEnv(seed=seed, **kw)
