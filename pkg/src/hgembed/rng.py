"""xoshiro256** generator with splitmix64 seeding.

numpy ships PCG64/Philox/SFC64 but not xoshiro256**, and every stream in this
package (parameter init, epoch shuffles, corpus synthesis) has to be
reproducible bit-for-bit from a 64-bit seed, so the generator lives here.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns ``(new_state, output)``."""
    state = (state + _GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Mix integer keys into a seed (per-tool / per-purpose streams)."""
    s = seed & MASK64
    for k in keys:
        s, out = splitmix64(s ^ (k & MASK64))
        s = out
    return s


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """xoshiro256** 1.0 (Blackman & Vigna)."""

    def __init__(self, seed: int):
        s = seed & MASK64
        state = []
        for _ in range(4):
            s, out = splitmix64(s)
            state.append(out)
        self.s = state

    @classmethod
    def stream(cls, seed: int, *keys: int) -> "Xoshiro256":
        return cls(derive_seed(seed, *keys) if keys else seed)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def below(self, n: int) -> int:
        """Integer in [0, n) via Lemire's multiply-shift (no rejection)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return (self.next_u64() * n) >> 64

    def randint(self, low: int, high: int) -> int:
        """Integer in the closed range [low, high]."""
        return low + self.below(high - low + 1)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates, last index first."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample(self, items: list, k: int) -> list:
        """``k`` distinct items in draw order (partial Fisher-Yates)."""
        pool = list(items)
        n = len(pool)
        if not 0 <= k <= n:
            raise ValueError("sample size out of range")
        for i in range(k):
            j = i + self.below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def uniform_array(self, n: int, low: float, high: float) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        span = high - low
        for i in range(n):
            out[i] = low + span * ((self.next_u64() >> 11) * (1.0 / (1 << 53)))
        return out
