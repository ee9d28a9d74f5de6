"""Network building blocks on top of :mod:`mappo.tensor`."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


def orthogonal_init(rows: int, cols: int, gain: float = 1.0, rng=None) -> Tensor:
    """Orthogonal matrix from the QR decomposition of a standard-normal draw.

    The larger orientation is orthogonalized and transposed back when
    ``rows < cols``; column signs follow ``sign(diag(R))`` so the result is
    uniformly distributed over the orthogonal group.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"orthogonal_init needs positive extents, got {rows}x{cols}")
    if gain <= 0:
        raise ValueError("gain must be positive")
    rng = np.random.default_rng() if rng is None else rng
    big, small = max(rows, cols), min(rows, cols)
    a = rng.standard_normal((big, small))
    q, r = np.linalg.qr(a)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    q = q * d
    w = q if rows >= cols else q.T
    return Tensor(gain * w, requires_grad=True)


ACT_GAINS = {"tanh": 5.0 / 3.0, "relu": float(np.sqrt(2.0))}


def activation(name: str):
    if name == "tanh":
        return T.tanh
    if name == "relu":
        return T.relu
    raise ValueError(f"unknown activation {name!r}")


class Module:
    """Minimal parameter container; subclasses list child attributes in ``_children``."""

    _children: tuple[str, ...] = ()

    def named_parameters(self, prefix=""):
        for key in self._children:
            obj = getattr(self, key)
            name = f"{prefix}{key}"
            if isinstance(obj, Tensor):
                yield name, obj
            elif isinstance(obj, Module):
                yield from obj.named_parameters(name + ".")
            elif isinstance(obj, list):
                for i, m in enumerate(obj):
                    yield from m.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        """Zero (not drop) gradients so parameters outside the loss read exactly 0."""
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)


class Linear(Module):
    _children = ("W", "b")

    def __init__(self, in_dim, out_dim, gain=1.0, rng=None):
        self.W = orthogonal_init(out_dim, in_dim, gain, rng)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x):
        return T.linear(x, self.W, self.b)


class LayerNorm(Module):
    _children = ("gain", "bias")

    def __init__(self, dim):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x):
        return T.layer_norm(x, self.gain, self.bias)


@dataclass
class GruState:
    hidden: Tensor

    @classmethod
    def zeros(cls, batch, hidden_dim):
        return cls(Tensor(np.zeros((batch, hidden_dim))))


class GRUCell(Module):
    _children = ("W_ih", "W_hh", "b_ih", "b_hh")

    def __init__(self, in_dim, hidden_dim, rng=None):
        self.hidden_dim = hidden_dim
        self.W_ih = orthogonal_init(3 * hidden_dim, in_dim, 1.0, rng)
        self.W_hh = orthogonal_init(3 * hidden_dim, hidden_dim, 1.0, rng)
        self.b_ih = Tensor(np.zeros(3 * hidden_dim), requires_grad=True)
        self.b_hh = Tensor(np.zeros(3 * hidden_dim), requires_grad=True)

    def __call__(self, x, state: GruState, reset=None) -> GruState:
        """Advance one step; rows flagged in ``reset`` start from a zero hidden state."""
        h = state.hidden
        if h.shape[-1] != self.hidden_dim:
            raise ValueError(f"hidden width {h.shape[-1]} != {self.hidden_dim}")
        if reset is not None and np.any(reset):
            h = T.mul(h, (1.0 - np.asarray(reset, dtype=float))[:, None])
        return GruState(T.gru_cell(x, h, self.W_ih, self.W_hh, self.b_ih, self.b_hh))


def gru_cell(x, h: GruState, params: GRUCell, reset=None) -> GruState:
    return params(x, h, reset)


class Network(Module):
    """Input layer-norm -> ``n_fc`` dense layers -> optional GRU -> linear head.

    Mirrors the "num fc" / "num GRU layers" / "num fc after" layout; the head
    is the single post-recurrent linear layer.
    """

    _children = ("feature_norm", "fcs", "gru", "head")

    def __init__(self, in_dim, out_dim, hidden_dim=64, n_fc=2, act="tanh",
                 recurrent=True, out_gain=1.0, feature_norm=True, rng=None):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.hidden_dim = hidden_dim
        self.recurrent = recurrent
        self.act_name = act
        self._act = activation(act)
        self.feature_norm = LayerNorm(in_dim) if feature_norm else None
        gain = ACT_GAINS[act]
        self.fcs = [Linear(in_dim if i == 0 else hidden_dim, hidden_dim, gain, rng)
                    for i in range(n_fc)]
        self.gru = GRUCell(hidden_dim, hidden_dim, rng) if recurrent else None
        self.head = Linear(hidden_dim, out_dim, out_gain, rng)
        self._children = tuple(k for k in Network._children if getattr(self, k) is not None)

    def __call__(self, x, h: GruState | None = None, reset=None):
        """Returns ``(output, next_state)``; next_state is None for MLP networks."""
        x = T.as_tensor(x)
        if self.feature_norm is not None:
            x = self.feature_norm(x)
        for fc in self.fcs:
            x = self._act(fc(x))
        if self.gru is not None:
            if h is None:
                h = GruState.zeros(x.shape[0], self.hidden_dim)
            h = self.gru(x, h, reset)
            x = h.hidden
        return self.head(x), h


class Categorical:
    """Categorical distribution over logits with an optional availability mask."""

    def __init__(self, logits, available=None):
        self.logits = T.as_tensor(logits)
        self.available = None if available is None else np.asarray(available, dtype=bool)
        self.log_probs = T.masked_log_softmax(self.logits, self.available)
        p = np.exp(self.log_probs.data)
        if self.available is not None:
            p = np.where(self.available, p, 0.0)
        self.probs = p / p.sum(axis=-1, keepdims=True)

    def sample(self, rng) -> np.ndarray:
        c = np.cumsum(self.probs, axis=-1)
        u = rng.random(c.shape[0]) * c[:, -1]
        # strict '>' never lands on a zero-probability entry
        return (c > u[:, None]).argmax(axis=-1)

    def mode(self) -> np.ndarray:
        return self.probs.argmax(axis=-1)

    def log_prob(self, actions) -> Tensor:
        return T.gather_last(self.log_probs, np.asarray(actions))

    def entropy(self) -> Tensor:
        p = T.exp(self.log_probs)
        return T.neg(T.tsum(T.mul(p, self.log_probs), axis=-1))


def categorical_head(logits, available=None) -> Categorical:
    return Categorical(logits, available)
