"""Dense fp64 tensors with a reverse-mode gradient tape.

Operations record themselves on the innermost active :class:`Tape` when at
least one input requires a gradient.  Recording order is a valid topological
order, so :func:`backward` simply walks the tape in reverse.

Layer-level kernels (linear, GRU cell, layer norm, masked log-softmax) are
fused into single tape nodes with hand-derived backward passes; this keeps
per-op Python overhead small enough for single-core training.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

DTYPE = np.float64


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class Tape:
    def __init__(self):
        self.nodes: list[Tensor] = []

    def record(self, node: "Tensor"):
        node._node = len(self.nodes)
        self.nodes.append(node)

    def clear(self):
        for node in self.nodes:
            node._backward = None
            node._node = None
        self.nodes = []


_TAPES: list[Tape] = []


@contextmanager
def tape():
    """Activate a fresh gradient tape for the enclosed block."""
    t = Tape()
    _TAPES.append(t)
    try:
        yield t
    finally:
        _TAPES.pop()
        # A tape abandoned without backward still must not keep closures alive.
        t.clear()


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_node", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def tape_id(self):
        return self._node

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"item() on tensor of shape {self.shape}")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    t = active_tape()
    if t is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._backward = backward
        t.record(out)
    return out


def _check_finite(arr: np.ndarray, op: str):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {op}")


def backward(loss: Tensor):
    """Populate ``.grad`` of every leaf reachable from scalar ``loss``; clears the tape."""
    t = active_tape()
    if loss.size != 1:
        raise ValueError("backward() needs a scalar loss")
    if t is None or loss._node is None or loss._backward is None:
        raise RuntimeError("backward() on a tensor that is not recorded on the active tape")
    _check_finite(loss.data, "loss")
    loss.grad = np.ones_like(loss.data)
    nodes = t.nodes
    for node in reversed(nodes[: loss._node + 1]):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad)
            node.grad = None  # interior grads are not kept
    t.clear()


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    _check_finite(out, "div")

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: _accum(a, -g))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    _check_finite(out, "exp")
    return _make(out, (a,), lambda g: _accum(a, g * out))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    _check_finite(out, "log")
    return _make(out, (a,), lambda g: _accum(a, g / a.data))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: _accum(a, 2.0 * g * a.data))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: _accum(a, g * (1.0 - out * out)))


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return _make(out, (a,), lambda g: _accum(a, g * (a.data > 0)))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: _accum(a, g * out * (1.0 - out)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: overflow-free and much cheaper than a masked exp
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def minimum(a, b) -> Tensor:
    """Elementwise min; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * pick_a, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * ~pick_a, b.shape))

    return _make(np.where(pick_a, a.data, b.data), (a, b), bw)


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * pick_a, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * ~pick_a, b.shape))

    return _make(np.where(pick_a, a.data, b.data), (a, b), bw)


def clip(a, lo, hi) -> Tensor:
    """Clamp to [lo, hi]; gradient is zero wherever the clamp is active."""
    a = as_tensor(a)
    lo_d = lo.data if isinstance(lo, Tensor) else lo
    hi_d = hi.data if isinstance(hi, Tensor) else hi
    out = np.clip(a.data, lo_d, hi_d)
    inside = (a.data >= lo_d) & (a.data <= hi_d)
    return _make(out, (a,), lambda g: _accum(a, g * inside))


# ---------------------------------------------------------------- reductions / shape


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _make(out, (a,), bw)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return tsum(a, axis) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: _accum(a, g.reshape(a.shape)))


def index(a, idx) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _make(a.data[idx], (a,), bw)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                _accum(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                _accum(t, np.take(g, i, axis=axis))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, bw)


def gather_last(a, idx: np.ndarray) -> Tensor:
    """``a[..., idx]`` per row: picks one entry of the last axis for each leading index."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    out = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        _accum(a, full)

    return _make(out, (a,), bw)


def masked_mean(a, mask: np.ndarray, count: float | None = None) -> Tensor:
    """Sum of ``a`` over ``mask`` divided by ``count`` (defaults to mask.sum())."""
    a = as_tensor(a)
    m = np.asarray(mask, dtype=DTYPE)
    n = float(m.sum()) if count is None else float(count)
    if n <= 0:
        raise ValueError("masked_mean over an empty mask")
    return _make(np.sum(a.data * m) / n, (a,), lambda g: _accum(a, g * m / n))


# ---------------------------------------------------------------- fused layers


def linear(x, W, b=None) -> Tensor:
    """y = x @ W.T + b for x [batch, in], W [out, in], b [out]."""
    x, W = as_tensor(x), as_tensor(W)
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight in-extent {W.shape[1]}")
    out = x.data @ W.data.T
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[0],):
            raise ValueError(f"linear: bias shape {b.shape} != ({W.shape[0]},)")
        out = out + b.data
    parents = (x, W) if b is None else (x, W, b)

    def bw(g):
        if x.requires_grad:
            _accum(x, g @ W.data)
        if W.requires_grad:
            _accum(W, g.T @ x.data)
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=0))

    return _make(out, parents, bw)


def layer_norm(x, gain, bias, eps=1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        if gain.requires_grad:
            _accum(gain, (g * xhat).reshape(-1, x.shape[-1]).sum(axis=0))
        if bias.requires_grad:
            _accum(bias, g.reshape(-1, x.shape[-1]).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            n = x.shape[-1]
            dx = inv / n * (n * gx - gx.sum(axis=-1, keepdims=True)
                            - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
            _accum(x, dx)

    return _make(out, (x, gain, bias), bw)


def gru_cell(x, h, W_ih, W_hh, b_ih, b_hh) -> Tensor:
    """One GRU step (reset, update, candidate gate order).

        r  = sigmoid(x W_ir^T + b_ir + h W_hr^T + b_hr)
        z  = sigmoid(x W_iz^T + b_iz + h W_hz^T + b_hz)
        n  = tanh(x W_in^T + b_in + r * (h W_hn^T + b_hn))
        h' = (1 - z) * n + z * h

    W_ih is [3H, in] and W_hh is [3H, H], gate blocks stacked as (r, z, n).
    """
    x, h, W_ih, W_hh, b_ih, b_hh = map(as_tensor, (x, h, W_ih, W_hh, b_ih, b_hh))
    H = h.shape[-1]
    if W_hh.shape != (3 * H, H) or W_ih.shape != (3 * H, x.shape[-1]):
        raise ValueError(f"gru_cell: weight shapes {W_ih.shape}, {W_hh.shape} do not fit "
                         f"input {x.shape} / hidden {h.shape}")
    gi = x.data @ W_ih.data.T + b_ih.data
    gh = h.data @ W_hh.data.T + b_hh.data
    rz = _sigmoid(gi[:, :2 * H] + gh[:, :2 * H])
    r, z = rz[:, :H], rz[:, H:]
    hn = gh[:, 2 * H:]
    n = np.tanh(gi[:, 2 * H:] + r * hn)
    out = (1.0 - z) * n + z * h.data

    def bw(g):
        dn = g * (1.0 - z)
        dz = g * (h.data - n)
        dn_pre = dn * (1.0 - n * n)
        dr = dn_pre * hn
        dr_pre = dr * r * (1.0 - r)
        dz_pre = dz * z * (1.0 - z)
        dgi = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
        dgh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
        if x.requires_grad:
            _accum(x, dgi @ W_ih.data)
        if h.requires_grad:
            _accum(h, dgh @ W_hh.data + g * z)
        if W_ih.requires_grad:
            _accum(W_ih, dgi.T @ x.data)
        if W_hh.requires_grad:
            _accum(W_hh, dgh.T @ h.data)
        if b_ih.requires_grad:
            _accum(b_ih, dgi.sum(axis=0))
        if b_hh.requires_grad:
            _accum(b_hh, dgh.sum(axis=0))

    return _make(out, (x, h, W_ih, W_hh, b_ih, b_hh), bw)


MASKED_LOGIT = -1e9


def masked_log_softmax(logits, available: np.ndarray | None = None) -> Tensor:
    """Log-probabilities over the last axis with unavailable entries forced to ~-1e9."""
    logits = as_tensor(logits)
    z = logits.data
    if available is not None:
        available = np.asarray(available, dtype=bool)
        if not np.all(available.any(axis=-1)):
            raise ValueError("masked_log_softmax: a row has no available action")
        z = np.where(available, z, MASKED_LOGIT)
    m = z.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    if available is not None:
        p = np.where(available, p, 0.0)

    def bw(g):
        d = g - p * g.sum(axis=-1, keepdims=True)
        if available is not None:
            d = np.where(available, d, 0.0)
        _accum(logits, d)

    return _make(out, (logits,), bw)


def huber(pred, target, delta: float) -> Tensor:
    """Elementwise Huber: e^2/2 inside |e| <= delta, delta*(|e| - delta/2) outside."""
    pred, target = as_tensor(pred), as_tensor(target)
    if delta <= 0:
        raise ValueError("huber delta must be positive")
    e = pred.data - target.data
    ae = np.abs(e)
    quad = ae <= delta
    out = np.where(quad, 0.5 * e * e, delta * (ae - 0.5 * delta))

    def bw(g):
        d = g * np.where(quad, e, delta * np.sign(e))
        if pred.requires_grad:
            _accum(pred, _unbroadcast(d, pred.shape))
        if target.requires_grad:
            _accum(target, _unbroadcast(-d, target.shape))

    return _make(out, (pred, target), bw)
