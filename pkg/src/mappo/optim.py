from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError, Tensor


@dataclass
class AdamState:
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    step_count: int = 0

    @classmethod
    def for_params(cls, params):
        return cls([np.zeros_like(p.data) for p in params],
                   [np.zeros_like(p.data) for p in params], 0)


def adam_step(params, grads, state: AdamState, lr, eps=1e-5, weight_decay=0.0,
              betas=(0.9, 0.999)):
    """Bias-corrected Adam update applied in place to ``params``."""
    b1, b2 = betas
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ValueError("adam_step: params, grads and state must be congruent")
    for g in grads:
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteError("adam_step: non-finite gradient")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"adam_step: grad shape {g.shape} != param shape {p.data.shape}")
        if weight_decay:
            g = g + weight_decay * p.data
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class Adam:
    def __init__(self, params, lr, eps=1e-5, weight_decay=0.0):
        self.params = list(params)
        self.lr, self.eps, self.weight_decay = lr, eps, weight_decay
        self.state = AdamState.for_params(self.params)

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state,
                  self.lr, self.eps, self.weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.grad = np.zeros_like(p.data)


def grad_norm(params) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params
                             if p.grad is not None)))


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    """Rescale all grads so their global L2 norm is at most ``max_norm``; returns the scale."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = grad_norm(params)
    if norm <= max_norm:
        return 1.0
    scale = max_norm / norm
    for p in params:
        if p.grad is not None:
            p.grad *= scale
    return scale
