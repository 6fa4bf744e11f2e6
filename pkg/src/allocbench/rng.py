"""Deterministic, platform-stable random streams.

Every allocator draws from a xoshiro256** generator whose 256-bit state is
seeded by SplitMix64.  The generator state is a ``uint64[4]`` numpy array so
the same stream can be advanced from jitted kernels and from Python.

Stream contract (what replay depends on):

- ``next_u64``      one xoshiro256** step.
- ``uniform_int(k)`` rejection on ``r < (2**64 - k) % k``, then ``r % k``.
- ``uniform_float``  ``(next_u64 >> 11) * 2**-53`` in ``[0, 1)``.
- ``draw_subset``    ``d`` slots filled in order; slot ``t`` redraws
                     ``uniform_int(n)`` until the value is not already in
                     slots ``0..t-1``.  Every ordered ``d``-tuple of distinct
                     indices is equally likely, so every ``d``-subset is too.
"""

from __future__ import annotations

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

# substream tags for derive_seed; stable, never renumber
STREAM_MAIN = 0
STREAM_WEIGHTS = 0x57
STREAM_COIN = 0xC0
STREAM_MD = 0x4D


def splitmix64(x: int) -> int:
    """One SplitMix64 output for input ``x`` (pure function)."""
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Fold integer keys into a seed: ``h = splitmix64(h ^ key)`` per key.

    ``derive_seed(seed, cell, trial)`` is the per-trial seed used by the
    experiment runner; ``derive_seed(seed, STREAM_WEIGHTS)`` etc. give the
    auxiliary streams.
    """
    h = splitmix64(seed & MASK64)
    for key in keys:
        h = splitmix64(h ^ (key & MASK64))
    return h


def seed_state(seed: int) -> np.ndarray:
    """xoshiro256** state for ``seed``: four successive SplitMix64 outputs."""
    x = seed & MASK64
    words = []
    for _ in range(4):
        words.append(splitmix64(x))
        x = (x + GOLDEN) & MASK64
    return np.array(words, dtype=np.uint64)


_U7 = np.uint64(7)
_U17 = np.uint64(17)
_U45 = np.uint64(45)
_U11 = np.uint64(11)
_U5 = np.uint64(5)
_U9 = np.uint64(9)


@njit(cache=True)
def _rotl(x, k):
    return (x << k) | (x >> (np.uint64(64) - k))


@njit(cache=True)
def next_u64(s):
    result = _rotl(s[1] * _U5, _U7) * _U9
    t = s[1] << _U17
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], _U45)
    return result


@njit(cache=True)
def uniform_int(s, k):
    """Uniform integer in ``[0, k)``; ``k >= 1``."""
    ku = np.uint64(k)
    threshold = (np.uint64(0) - ku) % ku
    r = next_u64(s)
    while r < threshold:
        r = next_u64(s)
    return np.int64(r % ku)


@njit(cache=True)
def uniform_float(s):
    return np.float64(next_u64(s) >> _U11) * 1.1102230246251565e-16


@njit(cache=True)
def draw_subset(s, n, d, out):
    """Fill ``out[:d]`` with ``d`` distinct indices from ``[0, n)``."""
    for t in range(d):
        while True:
            c = uniform_int(s, n)
            dup = False
            for q in range(t):
                if out[q] == c:
                    dup = True
                    break
            if not dup:
                break
        out[t] = c


@njit(cache=True)
def standard_normal(s):
    # Box-Muller, cosine branch only so each call consumes exactly two words
    u1 = uniform_float(s)
    u2 = uniform_float(s)
    return np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(2.0 * np.pi * u2)


class Rng:
    """Seeded stream usable from Python and from jitted kernels (``.state``)."""

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self.state = seed_state(self.seed)

    def substream(self, *keys: int) -> "Rng":
        return Rng(derive_seed(self.seed, *keys))

    def next_u64(self) -> int:
        return int(next_u64(self.state))

    def uniform_int(self, k: int) -> int:
        if k < 1:
            raise ValueError(f"uniform_int needs k >= 1, got {k}")
        return int(uniform_int(self.state, k))

    def uniform_float(self) -> float:
        return float(uniform_float(self.state))

    def draw_subset(self, n: int, d: int) -> list[int]:
        out = np.empty(d, dtype=np.int64)
        draw_subset(self.state, n, d, out)
        return [int(x) for x in out]

    def copy(self) -> "Rng":
        other = Rng.__new__(Rng)
        other.seed = self.seed
        other.state = self.state.copy()
        return other
