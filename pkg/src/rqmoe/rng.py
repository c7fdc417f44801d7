"""Counter-based pseudorandom streams (SplitMix64 finalizer over a counter).

Word ``i`` of stream ``(seed, stream)`` is ``mix64(key + (i + 1) * GAMMA)``
where ``key = mix64(mix64(seed) ^ stream)``. Everything is uint64 arithmetic
modulo 2**64, so any language can regenerate the same words. Uniforms take the
top 53 bits; normals come from Box-Muller over consecutive uniform pairs.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1


def mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def stream_key(seed: int, stream: int) -> int:
    return mix64(mix64(seed & _MASK) ^ (stream & _MASK))


class CounterRNG:
    """Deterministic generator addressed by (seed, stream, counter)."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self.key = stream_key(self.seed, self.stream)
        self.counter = 0

    def words(self, n: int) -> np.ndarray:
        i = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64_array(np.uint64(self.key) + i * np.uint64(GAMMA))

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1)."""
        return (self.words(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform_open(self, n: int) -> np.ndarray:
        """n doubles in (0, 1]; safe as a log argument."""
        return ((self.words(n) >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform_open(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log(u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = r * np.cos(theta)
        z[:, 1] = r * np.sin(theta)
        return z.ravel()[:n]

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection on 64-bit words."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            w = int(self.words(1)[0])
            if w < limit:
                return w % bound
