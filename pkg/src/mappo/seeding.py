"""Seed derivation: one master seed -> independent per-purpose seeds.

SplitMix64 is iterated from the master seed; successive outputs become the
env, init, sampling and evaluation seeds, in that order.  Holding ``init``
fixed while varying ``env`` is a matter of overriding one derived value.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
SEED_NAMES = ("env", "init", "sample", "eval")


def splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step: returns (next_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seeds(master: int) -> dict[str, int]:
    state = int(master) & MASK64
    out = {}
    for name in SEED_NAMES:
        state, value = splitmix64(state)
        out[name] = value
    return out
