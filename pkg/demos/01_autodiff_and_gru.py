"""
The autodiff core in five minutes
=================================

Operations on ``Tensor`` objects record themselves on a tape while a
``tape()`` block is open; ``backward`` walks it in reverse.  Everything is
float64, which is what makes finite-difference checks meaningful.
"""

import numpy as np

from mappo import tensor as T
from mappo.nn import GRUCell, GruState, Linear

rng = np.random.default_rng(0)

# a linear layer followed by tanh, squared and summed
layer = Linear(3, 2, gain=1.0, rng=rng)
x = rng.normal(size=(4, 3))
with T.tape():
    loss = T.tsum(T.square(T.tanh(layer(x))))
    T.backward(loss)
print("loss", loss.item())
print("dL/dW\n", layer.W.grad)

# the same gradient by central differences, one weight at a time
h = 1e-6
W = layer.W.data
num = np.zeros_like(W)
for i in range(W.shape[0]):
    for j in range(W.shape[1]):
        W[i, j] += h
        up = T.tsum(T.square(T.tanh(layer(x)))).item()
        W[i, j] -= 2 * h
        down = T.tsum(T.square(T.tanh(layer(x)))).item()
        W[i, j] += h
        num[i, j] = (up - down) / (2 * h)
print("max |analytic - numeric|", np.abs(num - layer.W.grad).max())

# a GRU cell carries a hidden state between calls; `reset` zeroes the rows
# whose episode just restarted before the step is taken
cell = GRUCell(3, 4, rng=rng)
state = GruState.zeros(4, 4)
for t in range(3):
    reset = np.array([t == 2, False, False, False])
    state = cell(rng.normal(size=(4, 3)), state, reset)
print("hidden after 3 steps\n", np.round(state.hidden.data, 3))

# gradients flow back through every step of the unrolled recurrence
state = GruState.zeros(4, 4)
with T.tape():
    for t in range(3):
        state = cell(x, state)
    T.backward(T.tsum(state.hidden))
print("|dL/dW_hh| =", np.linalg.norm(cell.W_hh.grad))
