"""Running statistics for value-target (and optional reward) normalization.

Critic targets are regressed in whitened space; critic outputs are mapped back
to the raw return scale before they enter advantage estimation.  The critic's
output layer is not rescaled when the statistics move.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VAR_FLOOR = 1e-8


@dataclass
class RunningMoments:
    """Debiased exponential moving averages of the mean and mean square."""

    decay: float = 0.99999
    running_mean: float = 0.0
    running_mean_sq: float = 0.0
    debias_accum: float = 0.0

    @property
    def initialized(self) -> bool:
        return self.debias_accum > 0.0

    @property
    def mean(self) -> float:
        return self.running_mean / self.debias_accum if self.initialized else 0.0

    @property
    def mean_sq(self) -> float:
        return self.running_mean_sq / self.debias_accum if self.initialized else 1.0

    @property
    def var(self) -> float:
        if not self.initialized:
            return 1.0
        return max(self.mean_sq - self.mean ** 2, VAR_FLOOR)

    @property
    def std(self) -> float:
        return float(np.sqrt(self.var))

    def update(self, batch) -> "RunningMoments":
        x = np.asarray(batch, dtype=np.float64).reshape(-1)
        if x.size == 0:
            raise ValueError("RunningMoments.update: empty batch")
        if not np.all(np.isfinite(x)):
            raise ValueError("RunningMoments.update: non-finite value in batch")
        w = 1.0 - self.decay
        self.running_mean = self.decay * self.running_mean + w * float(x.mean())
        self.running_mean_sq = self.decay * self.running_mean_sq + w * float(np.mean(x * x))
        self.debias_accum = self.decay * self.debias_accum + w
        return self

    def normalize(self, x):
        if not self.initialized:
            return np.asarray(x, dtype=np.float64)
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, y):
        if not self.initialized:
            return np.asarray(y, dtype=np.float64)
        return np.asarray(y, dtype=np.float64) * self.std + self.mean

    def scale(self, x):
        """Divide by the running standard deviation without centering."""
        if not self.initialized:
            return np.asarray(x, dtype=np.float64)
        return np.asarray(x, dtype=np.float64) / self.std

    def state_array(self) -> np.ndarray:
        return np.array([self.running_mean, self.running_mean_sq, self.decay, self.debias_accum])

    @classmethod
    def from_state_array(cls, arr) -> "RunningMoments":
        m, msq, decay, debias = (float(v) for v in arr)
        return cls(decay=decay, running_mean=m, running_mean_sq=msq, debias_accum=debias)


def update(m: RunningMoments, batch) -> RunningMoments:
    return m.update(batch)


def normalize(m: RunningMoments, x):
    return m.normalize(x)


def denormalize(m: RunningMoments, y):
    return m.denormalize(y)
