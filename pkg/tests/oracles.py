"""Independent reference computations shared by the test modules.

Nothing here imports the code under test except to read parameter arrays.
"""

import numpy as np


def central_diff(f, arrays, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. each array in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = f()
            a[i] = old - h
            fm = f()
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    """Max elementwise relative error with an absolute floor for near-zero entries."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(1e-6, np.abs(a) + np.abs(b))))


def naive_matmul(x, W):
    n, k = x.shape
    m = W.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += x[i, t] * W[j, t]
            out[i, j] = s
    return out


def scalar_gru(x, h, w):
    """Single-unit GRU step written out longhand; ``w`` maps gate name to weights."""
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))  # noqa: E731
    r = sig(w["ir"] * x + w["bir"] + w["hr"] * h + w["bhr"])
    z = sig(w["iz"] * x + w["biz"] + w["hz"] * h + w["bhz"])
    n = np.tanh(w["in"] * x + w["bin"] + r * (w["hn"] * h + w["bhn"]))
    return (1 - z) * n + z * h


def adam_trace(p, grads, lr, eps, b1=0.9, b2=0.999):
    """Textbook bias-corrected Adam on a scalar, one update per entry of ``grads``."""
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * mhat / (np.sqrt(vhat) + eps)
        out.append(p)
    return out


def gae_double_sum(rewards, values, next_values, dones, gamma, lam):
    """A_t = sum_k (gamma lam)^k delta_{t+k}, cut after the first terminal at or after t."""
    T = len(rewards)
    deltas = [rewards[t] + gamma * (0.0 if dones[t] else next_values[t]) - values[t]
              for t in range(T)]
    adv = np.zeros(T)
    for t in range(T):
        s = 0.0
        for k in range(T - t):
            s += (gamma * lam) ** k * deltas[t + k]
            if dones[t + k]:
                break
        adv[t] = s
    return adv


def softmax(z):
    e = np.exp(np.asarray(z, dtype=float) - np.max(z))
    return e / e.sum()


def particle_random_return(n_movers, episodes, seed, steps=25, n_landmarks=3):
    """Mean episode return of uniformly random movers that each chase a random
    landmark, written from the particle-world constants alone (dt 0.1, damping
    0.25, acceleration 5, arena [-1, 1]^2); reward is minus the summed
    mover-to-goal distance each step."""
    rng = np.random.default_rng(seed)
    dirs = np.array([[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]], dtype=float)
    total = 0.0
    for _ in range(episodes):
        landmarks = rng.uniform(-1, 1, (n_landmarks, 2))
        goals = landmarks[rng.integers(n_landmarks, size=n_movers)]
        pos = rng.uniform(-1, 1, (n_movers, 2))
        vel = np.zeros((n_movers, 2))
        for _ in range(steps):
            vel = 0.75 * vel + 0.5 * dirs[rng.integers(5, size=n_movers)]
            pos = pos + 0.1 * vel
            total -= np.sqrt(((pos - goals) ** 2).sum(axis=1)).sum()
    return total / episodes
