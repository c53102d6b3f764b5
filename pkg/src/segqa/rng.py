"""Deterministic counter-based pseudo-random generator.

All phantom randomness flows through the splitmix64 finalizer (xorshift-
multiply family) applied to a counter, so any language with 64-bit unsigned
arithmetic can reproduce the fixtures bit for bit:

    state_i = (seed + (i + 1) * 0x9E3779B97F4A7C15) mod 2^64
    z = state_i
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9   mod 2^64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB   mod 2^64
    output_i = z ^ (z >> 31)

Uniform doubles take the top 53 bits: u = (output >> 11) * 2^-53, giving
values in [0, 1). Normal deviates are Box-Muller pairs over consecutive
uniforms: r = sqrt(-2 ln(1 - u1)), z0 = r cos(2 pi u2), z1 = r sin(2 pi u2).
Derived streams use ``substream(seed, tag) = mix64(seed XOR mix64(tag))``.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MULT1 = 0xBF58476D1CE4E5B9
MULT2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1


def mix64(z: int) -> int:
    """Scalar splitmix64 finalizer over Python ints."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * MULT1) & _MASK
    z = ((z ^ (z >> 27)) * MULT2) & _MASK
    return z ^ (z >> 31)


def substream(seed: int, tag: int) -> int:
    """Derive an independent 64-bit seed for a tagged substream."""
    return mix64((seed ^ mix64(tag)) & _MASK)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MULT1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MULT2)
    return z ^ (z >> np.uint64(31))


class CounterRng:
    """Sequential view over the splitmix64 counter stream for one seed."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        self._counter = 0

    def u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs."""
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            state = np.uint64(self.seed) + idx * np.uint64(GAMMA)
            return _mix_array(state)

    def uniform(self, n: int) -> np.ndarray:
        """Next ``n`` doubles in [0, 1)."""
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        """Next ``n`` standard normal deviates (Box-Muller)."""
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1, u2 = u[:m], u[m:]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * m, dtype=np.float64)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n]

    def integers(self, n: int, bound: int) -> np.ndarray:
        """Next ``n`` ints uniform over [0, bound)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return np.minimum((self.uniform(n) * bound).astype(np.int64), bound - 1)

    def shuffled(self, items: list) -> list:
        """Fisher-Yates shuffle of a copy of ``items``."""
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = int(self.integers(1, i + 1)[0])
            out[i], out[j] = out[j], out[i]
        return out
