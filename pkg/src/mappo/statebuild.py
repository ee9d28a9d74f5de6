"""Critic inputs for each agent under the five value-input representations.

IND  local observation o_i
EP   environment-provided global state s
CL   concatenation (o_1, ..., o_n)
AS   s ++ o_i
FP   s with the declared overlap positions deleted ++ o_i

With ``include_agent_id`` a one-hot agent block is appended last.  A dead agent
under death masking gets an all-zero vector that keeps only that block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MODES = ("IND", "EP", "CL", "AS", "FP")
DEATH_MODES = ("mask", "keep", "drop", "mask_no_id")


class StateConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StateSpec:
    mode: str
    n_agents: int
    obs_dim: int
    env_state_dim: int = 0
    include_agent_id: bool = True
    fp_overlap_index: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.mode not in MODES:
            raise StateConfigError(f"unknown state mode {self.mode!r}; expected one of {MODES}")
        if self.mode in ("EP", "AS", "FP") and self.env_state_dim <= 0:
            raise StateConfigError(
                f"state mode {self.mode} needs an environment global state; "
                "this environment has none (use CL instead)")
        idx = tuple(int(i) for i in self.fp_overlap_index)
        if len(set(idx)) != len(idx):
            raise StateConfigError("fp_overlap_index contains duplicates")
        if any(i < 0 or i >= self.env_state_dim for i in idx):
            raise StateConfigError("fp_overlap_index out of range of the environment state")
        object.__setattr__(self, "fp_overlap_index", idx)

    @property
    def base_width(self) -> int:
        if self.mode == "IND":
            return self.obs_dim
        if self.mode == "EP":
            return self.env_state_dim
        if self.mode == "CL":
            return self.n_agents * self.obs_dim
        if self.mode == "AS":
            return self.env_state_dim + self.obs_dim
        return self.env_state_dim + self.obs_dim - len(self.fp_overlap_index)

    @property
    def width(self) -> int:
        return self.base_width + (self.n_agents if self.include_agent_id else 0)

    @property
    def _keep_index(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.env_state_dim), self.fp_overlap_index)


@dataclass
class BuiltState:
    vector: np.ndarray
    agent_index: int


def _one_hot(agent, n):
    v = np.zeros(n)
    v[agent] = 1.0
    return v


def dead_state(spec: StateSpec, agent: int, with_id: bool = True) -> BuiltState:
    """Zero vector of the StateSpec width, carrying only the one-hot agent ID (if enabled)."""
    if not 0 <= agent < spec.n_agents:
        raise IndexError(f"agent {agent} out of range for {spec.n_agents} agents")
    v = np.zeros(spec.width)
    if spec.include_agent_id and with_id:
        v[spec.base_width + agent] = 1.0
    return BuiltState(v, agent)


def build_state(spec: StateSpec, env_state, all_obs, agent: int, alive: bool = True,
                death_mode: str = "mask") -> BuiltState:
    if not 0 <= agent < spec.n_agents:
        raise IndexError(f"agent {agent} out of range for {spec.n_agents} agents")
    if not alive and death_mode in ("mask", "mask_no_id"):
        return dead_state(spec, agent, with_id=death_mode == "mask")
    all_obs = np.asarray(all_obs, dtype=np.float64)
    if all_obs.shape != (spec.n_agents, spec.obs_dim):
        raise ValueError(f"observations have shape {all_obs.shape}, "
                         f"expected {(spec.n_agents, spec.obs_dim)}")
    obs = all_obs[agent]
    if spec.mode == "IND":
        parts = [obs]
    elif spec.mode == "CL":
        parts = [all_obs.reshape(-1)]
    else:
        s = np.asarray(env_state, dtype=np.float64)
        if s.shape != (spec.env_state_dim,):
            raise ValueError(f"env state has shape {s.shape}, expected ({spec.env_state_dim},)")
        if spec.mode == "EP":
            parts = [s]
        elif spec.mode == "AS":
            parts = [s, obs]
        else:
            parts = [s[spec._keep_index], obs]
    if spec.include_agent_id:
        parts.append(_one_hot(agent, spec.n_agents))
    return BuiltState(np.concatenate(parts), agent)


def build_states(spec: StateSpec, env_state, obs, alive, death_mode="mask") -> np.ndarray:
    """Batched :func:`build_state`: env_state [E, S], obs [E, n, D], alive [E, n] -> [E, n, W]."""
    obs = np.asarray(obs, dtype=np.float64)
    E, n, D = obs.shape
    if (n, D) != (spec.n_agents, spec.obs_dim):
        raise ValueError(f"observations have shape {obs.shape[1:]}, "
                         f"expected {(spec.n_agents, spec.obs_dim)}")
    if spec.mode == "IND":
        base = obs
    elif spec.mode == "CL":
        base = np.broadcast_to(obs.reshape(E, 1, n * D), (E, n, n * D))
    else:
        s = np.asarray(env_state, dtype=np.float64)
        if s.shape != (E, spec.env_state_dim):
            raise ValueError(f"env state has shape {s.shape}, expected {(E, spec.env_state_dim)}")
        if spec.mode == "FP":
            s = s[:, spec._keep_index]
        s = np.broadcast_to(s[:, None, :], (E, n, s.shape[1]))
        base = s if spec.mode == "EP" else np.concatenate([s, obs], axis=-1)
    parts = [base]
    if spec.include_agent_id:
        parts.append(np.broadcast_to(np.eye(n), (E, n, n)))
    out = np.concatenate(parts, axis=-1)
    if death_mode in ("mask", "mask_no_id"):
        dead = ~np.asarray(alive, dtype=bool)
        if dead.any():
            out[dead, : spec.base_width] = 0.0
            if death_mode == "mask_no_id":
                out[dead] = 0.0
    return out
