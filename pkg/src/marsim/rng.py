"""Counter-based random numbers for reproducible, schedule-independent draws.

The generator is a vectorized Philox-4x32 (10 rounds).  A draw is addressed
by ``(key, stream, draw)``: ``key`` is the 64-bit seed, ``stream`` typically
indexes an independent unit of work (a photon history, a sinogram row, a
dataset sample) and ``draw`` counts the values consumed within the stream.
The value at an address never depends on evaluation order or batch size, so
parallel schedules reproduce serial output exactly.
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)


def splitmix64(x: int) -> int:
    """One splitmix64 mixing step (wrapping 64-bit arithmetic)."""
    mask = 0xFFFFFFFFFFFFFFFF
    z = (int(x) + 0x9E3779B97F4A7C15) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return z ^ (z >> 31)


def derive_seed(seed: int, *parts: int) -> int:
    """Derive a child 64-bit seed from ``seed`` and integer tags.

    Used to hand independent sub-seeds to samples, slices and subsystems so
    that no two consumers share a Philox key by accident.
    """
    z = int(seed) & 0xFFFFFFFFFFFFFFFF
    for p in parts:
        z = splitmix64(z ^ splitmix64(int(p) & 0xFFFFFFFFFFFFFFFF))
    return z


def _philox_round(c0, c1, c2, c3, k0, k1):
    with np.errstate(over="ignore"):
        p0 = c0.astype(np.uint64) * _M0
        p1 = c2.astype(np.uint64) * _M1
        hi0 = (p0 >> np.uint64(32)).astype(np.uint32)
        lo0 = (p0 & _MASK32).astype(np.uint32)
        hi1 = (p1 >> np.uint64(32)).astype(np.uint32)
        lo1 = (p1 & _MASK32).astype(np.uint32)
        return hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0


def philox4x32(counter: np.ndarray, key: np.ndarray) -> np.ndarray:
    """Philox-4x32-10 block function.

    ``counter``: uint32 array of shape (..., 4); ``key``: uint32 (..., 2).
    Returns uint32 array of shape (..., 4).
    """
    c0, c1, c2, c3 = (counter[..., i].copy() for i in range(4))
    k0 = key[..., 0].copy()
    k1 = key[..., 1].copy()
    with np.errstate(over="ignore"):
        for _ in range(10):
            c0, c1, c2, c3 = _philox_round(c0, c1, c2, c3, k0, k1)
            k0 = k0 + _W0
            k1 = k1 + _W1
    return np.stack([c0, c1, c2, c3], axis=-1)


class CounterRNG:
    """Stateless counter-based generator addressed by (stream, draw)."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._key_words = (
            np.uint32(self.seed & 0xFFFFFFFF),
            np.uint32(self.seed >> 32),
        )

    def _block(self, stream: np.ndarray, draw: np.ndarray) -> np.ndarray:
        stream = np.asarray(stream, dtype=np.uint64)
        draw = np.asarray(draw, dtype=np.uint64)
        stream, draw = np.broadcast_arrays(stream, draw)
        counter = np.empty(stream.shape + (4,), dtype=np.uint32)
        counter[..., 0] = (draw & _MASK32).astype(np.uint32)
        counter[..., 1] = (draw >> np.uint64(32)).astype(np.uint32)
        counter[..., 2] = (stream & _MASK32).astype(np.uint32)
        counter[..., 3] = (stream >> np.uint64(32)).astype(np.uint32)
        key = np.empty(stream.shape + (2,), dtype=np.uint32)
        key[..., 0] = self._key_words[0]
        key[..., 1] = self._key_words[1]
        return philox4x32(counter, key)

    def uniform(self, stream, draw) -> np.ndarray:
        """U(0,1) with 32-bit resolution; never returns 0 or 1 exactly."""
        block = self._block(stream, draw)
        return (block[..., 0].astype(np.float64) + 0.5) * 2.0**-32

    def uniform_words(self, stream, draw, n: int) -> np.ndarray:
        """Up to 4 independent U(0,1) values per (stream, draw) address."""
        if not 1 <= n <= 4:
            raise ValueError("n must be in 1..4")
        block = self._block(stream, draw)
        return (block[..., :n].astype(np.float64) + 0.5) * 2.0**-32

    def normal(self, stream, draw) -> np.ndarray:
        """Standard normal via Box-Muller on two words of one block."""
        block = self._block(stream, draw)
        u1 = (block[..., 0].astype(np.float64) + 0.5) * 2.0**-32
        u2 = (block[..., 1].astype(np.float64) + 0.5) * 2.0**-32
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def integers(self, stream, draw, high: int) -> np.ndarray:
        """Integers in [0, high) (high <= 2**32, small modulo bias accepted)."""
        block = self._block(stream, draw)
        return (block[..., 0].astype(np.uint64) % np.uint64(high)).astype(np.int64)
