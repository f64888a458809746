"""Counter-based SplitMix64 streams, vectorised over numpy uint64.

Results depend only on the seed and the number of draws, so runs are
reproducible bit-for-bit across platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["SplitMix64", "derive_seed"]

_GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, *keys) -> int:
    """Independent child seed for a named sub-stream."""
    h = hashlib.sha256(str(int(seed) & _MASK).encode())
    for k in keys:
        h.update(b"\x00" + str(k).encode())
    return int.from_bytes(h.digest()[:8], "little")


class SplitMix64:
    def __init__(self, seed: int = 0):
        self.state = int(seed) & _MASK

    def next_uint64(self, n: int) -> np.ndarray:
        idx = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + idx * np.uint64(_GAMMA)
            out = _mix(z)
        self.state = (self.state + n * _GAMMA) & _MASK
        return out

    def random(self, size=None):
        """Uniforms in [0, 1) with 53 random bits."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_uint64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return low + (high - low) * self.random(size)

    def normal(self, size) -> np.ndarray:
        """Standard normals by Box-Muller (cosine branch only)."""
        n = int(np.prod(size))
        u1 = 1.0 - self.random(n)
        u2 = self.random(n)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return z.reshape(size)

    def integers(self, low: int, high: int, size) -> np.ndarray:
        """Integers in [low, high) (modulo reduction; bias is negligible for small ranges)."""
        n = int(np.prod(size))
        span = np.uint64(high - low)
        return (self.next_uint64(n) % span).astype(np.int64).reshape(size) + low
