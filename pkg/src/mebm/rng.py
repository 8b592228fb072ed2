"""Seeded random streams.

Every random draw in the package comes from a 64-bit seed split into named
streams.  Scalar draws (class choice, event picks, jitter offsets) use a
xoshiro256** generator; bulk draws (weight init, dropout masks, synthetic
noise) use a counter-based splitmix64 hash so that element ``i`` of a block
depends only on ``(key, i)``.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & MASK64
    return h


def splitmix64_mix(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_key(seed: int, *names) -> int:
    """Key for the stream ``seed ⊕ fnv1a64("a/b/c")``."""
    name = "/".join(str(n) for n in names)
    return (int(seed) & MASK64) ^ fnv1a64(name)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class RngStream:
    """xoshiro256** seeded from a 64-bit key through splitmix64."""

    __slots__ = ("_s",)

    def __init__(self, key: int):
        x = int(key) & MASK64
        s = []
        for _ in range(4):
            x = (x + GOLDEN) & MASK64
            s.append(splitmix64_mix(x))
        self._s = s

    @classmethod
    def from_names(cls, seed: int, *names) -> "RngStream":
        return cls(derive_key(seed, *names))

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n)."""
        if n <= 0:
            raise ValueError(f"upper bound must be positive, got {n}")
        threshold = ((1 << 64) - n) % n
        while True:
            r = self.next_u64()
            if r >= threshold:
                return r % n

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in the closed interval [low, high]."""
        if high < low:
            raise ValueError(f"empty range [{low}, {high}]")
        return low + self.below(high - low + 1)

    def below_array(self, n: int, size: int) -> np.ndarray:
        return np.array([self.below(n) for _ in range(size)], dtype=np.int64)

    def integers_array(self, low: int, high: int, size: int) -> np.ndarray:
        span = high - low + 1
        return np.array([low + self.below(span) for _ in range(size)], dtype=np.int64)

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


# -- counter-based bulk draws -------------------------------------------------

_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(GOLDEN)


def counter_u64(key: int, size: int, offset: int = 0) -> np.ndarray:
    """``splitmix64`` outputs ``offset .. offset+size-1`` of the stream at ``key``."""
    idx = np.arange(offset + 1, offset + size + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(int(key) & MASK64) + idx * _GOLD
        z = (z ^ (z >> np.uint64(30))) * _C1
        z = (z ^ (z >> np.uint64(27))) * _C2
    return z ^ (z >> np.uint64(31))


def counter_uniform(key: int, size: int, offset: int = 0) -> np.ndarray:
    """Float64 uniforms in [0, 1); element i depends only on (key, offset + i)."""
    u = counter_u64(key, size, offset) >> np.uint64(11)
    return u.astype(np.float64) * (1.0 / (1 << 53))


def counter_normal(key: int, size: int, offset: int = 0) -> np.ndarray:
    """Standard normals by Box-Muller; element i consumes counters 2i and 2i+1."""
    u = counter_uniform(key, 2 * size, 2 * offset)
    u1 = 1.0 - u[0::2]
    u2 = u[1::2]
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)
