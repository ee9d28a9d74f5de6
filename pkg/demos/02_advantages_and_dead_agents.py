"""
Advantages, critic inputs and what happens when an agent dies
=============================================================

A rollout lives in a ``TrajectoryBatch`` of shape [T, E, A] (time, parallel
environments, agents).  This script builds a tiny one by hand, shows the
critic input layouts, then walks through the four ways a dead agent's
transitions can be treated.
"""

import numpy as np

from mappo.rollout import TrajectoryBatch, apply_death_handling, compute_gae, gae
from mappo.statebuild import StateSpec, build_state

# GAE on a single 3-step trajectory with gamma = lambda = 1 and zero values
# is just the reward-to-go
print(gae(np.array([1.0, 2.0, 3.0]), np.zeros(3), np.zeros(3),
          np.array([False, False, True]), 1.0, 1.0))

# ---------------------------------------------------------------- critic inputs
# two agents, 3-dim observations, a 4-dim environment state whose last entry
# is also copied into every observation
obs = np.array([[1.0, 2.0, 9.0], [3.0, 4.0, 9.0]])
env_state = np.array([0.1, 0.2, 0.3, 9.0])
for mode in ("IND", "EP", "CL", "AS", "FP"):
    spec = StateSpec(mode, 2, 3, 4, include_agent_id=True, fp_overlap_index=(3,))
    row = build_state(spec, env_state, obs, agent=0).vector
    print(f"{mode:>3} width {spec.width:>2}  agent 0: {row}")

# a dead agent under death masking: zeros everywhere except its ID
spec = StateSpec("CL", 2, 3)
print("dead agent 1:", build_state(spec, None, obs, agent=1, alive=False).vector)

# ---------------------------------------------------------------- death modes
# one environment, one agent that dies after step 2 of a 5-step episode
T = 5
b = TrajectoryBatch.empty(T, 1, 1, 3, spec.width, 2)
b.rewards[:, 0, 0] = [1.0, 1.0, 1.0, 1.0, 1.0]
b.alive[:, 0, 0] = [True, True, True, False, False]
b.active[...] = True
b.dones[-1] = True
b.bootstrap_values = np.zeros((1, 1))

# (returns at inactive entries are computed but no loss ever reads them)
for mode in ("keep", "drop"):
    out = apply_death_handling(b, mode, gamma=1.0)
    adv = compute_gae(out, 1.0, 1.0, normalize_advantages=False)
    print(f"{mode:>4}: rewards {out.rewards[:, 0, 0]}, active {out.active[:, 0, 0].astype(int)}, "
          f"returns {adv.returns[:, 0, 0]}")

# under `drop` the rewards earned after death are folded into the last living
# step, so with gamma = 1 the total is unchanged
out = apply_death_handling(b, "drop", gamma=1.0)
print("total kept:", out.rewards[out.active].sum(), "== raw total:", b.rewards.sum())

# the policy loss only sees steps where the agent was alive and active
print("policy mask:", b.policy_mask[:, 0, 0].astype(int))
