"""Portable seeded random streams.

Every random draw in the package goes through :class:`Stream`, which wraps
numpy's Philox-4x64 counter-based bit generator.  Only the raw 64-bit output
of the bit generator is used; uniforms and normals are derived here, so a
stream yields the same values on every platform and numpy version.

A stream is addressed by an integer seed plus a path of labels, e.g.
``Stream(7, "synth", 3)`` for conversation 3 of a corpus with seed 7.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _label_int(label: int | str) -> int:
    if isinstance(label, str):
        return zlib.crc32(label.encode("utf-8")) | (1 << 40)
    return int(label) & _MASK64


def derive_key(seed: int, *path: int | str) -> tuple[int, int]:
    """Philox key for ``seed`` and a path of labels."""
    h = _splitmix64(0x5EED)
    for label in path:
        h = _splitmix64(h ^ _label_int(label))
    return int(seed) & _MASK64, h


class Stream:
    """Deterministic random stream addressed by ``(seed, *path)``."""

    def __init__(self, seed: int, *path: int | str):
        self.key = derive_key(seed, *path)
        self._bits = np.random.Philox(key=np.array(self.key, dtype=np.uint64))

    def child(self, *path: int | str) -> "Stream":
        s = Stream.__new__(Stream)
        h = self.key[1]
        for label in path:
            h = _splitmix64(h ^ _label_int(label))
        s.key = (self.key[0], h)
        s._bits = np.random.Philox(key=np.array(s.key, dtype=np.uint64))
        return s

    def raw(self, n: int) -> np.ndarray:
        return np.asarray(self._bits.random_raw(n), dtype=np.uint64)

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        """Uniform draws on ``[low, high)`` with 53 bits of resolution."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        out = low + (high - low) * u
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def normal(self, size=None, mean: float = 0.0, std: float = 1.0):
        """Box-Muller normals."""
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(m)  # (0, 1]
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        out = mean + std * z
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def integers(self, n: int, size=None):
        """Integers in ``[0, n)`` (multiply-shift; bias below 2**-53 * n)."""
        u = self.uniform(size)
        return np.minimum((np.asarray(u) * n).astype(np.int64), n - 1) if size is not None else min(int(u * n), n - 1)

    def permutation(self, n: int) -> np.ndarray:
        keys = self.raw(n)
        return np.argsort(keys, kind="stable")

    def bernoulli(self, p: float) -> bool:
        return self.uniform() < p
