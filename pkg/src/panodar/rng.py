"""SplitMix64, vectorised.

The generator is pinned by algorithm (Steele, Lea & Flood 2014; constants as
in Vigna's reference ``splitmix64.c``) so synthetic fixtures reproduce across
platforms and implementations. Output ``k`` (0-based) of a generator seeded
with ``s`` is ``mix(s + (k + 1) * GAMMA mod 2**64)``, which lets a block of
outputs be computed without a Python-level loop.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        k = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(np.uint64(self.seed) + k * np.uint64(GAMMA))

    def random(self, n: int) -> np.ndarray:
        """Uniform doubles in [0, 1) from the top 53 bits."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def integers(self, n: int, high: int) -> np.ndarray:
        """Integers in ``[0, high)`` as ``floor(random() * high)``."""
        if high < 1:
            raise ValueError("high must be positive")
        return np.minimum((self.random(n) * high).astype(np.int64), high - 1)

    def spawn(self, stream: int) -> "SplitMix64":
        """Independent child generator for a numbered sub-stream."""
        child_seed = int(_mix(np.array([(self.seed + (stream + 1) * GAMMA * 0x2545F491) & MASK64],
                                       dtype=np.uint64))[0])
        return SplitMix64(child_seed)
