"""Portable random streams.

Every stochastic routine in the package draws from a Philox4x64-10 counter
generator keyed by ``(seed, stream_id)``: the low key word is the seed and the
high key word the stream id, counter starting at zero. Uniforms take the top
53 bits of each raw 64-bit output, offset by half a ulp so they lie strictly
inside (0, 1); normals are the inverse normal CDF of those uniforms. Any
implementation with a Philox4x64-10 core and an inverse normal CDF can
reproduce the fixtures bit-for-bit.
"""
from __future__ import annotations

import hashlib

import numpy as np
from scipy.special import ndtri

MASK64 = (1 << 64) - 1

# Named streams used by the synthetic tensor generator.
STREAMS = {
    "question": 1,
    "a": 2,
    "b": 3,
    "interaction": 4,
    "noise": 5,
}

_TWO_M53 = 2.0 ** -53


class Stream:
    """A keyed Philox stream producing uniforms, normals and integers."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & MASK64
        self.stream_id = int(stream_id) & MASK64
        self._bitgen = np.random.Philox(key=self.seed | (self.stream_id << 64))

    def raw(self, size: int) -> np.ndarray:
        return np.asarray(self._bitgen.random_raw(size), dtype=np.uint64)

    def uniform(self, size: int) -> np.ndarray:
        top = (self.raw(size) >> np.uint64(11)).astype(np.float64)
        return (top + 0.5) * _TWO_M53

    def normal(self, size: int, sd: float = 1.0) -> np.ndarray:
        if sd == 0.0:
            # Keep the stream position independent of the sd value.
            self.raw(size)
            return np.zeros(size)
        return sd * ndtri(self.uniform(size))

    def integers(self, high: int, size: int) -> np.ndarray:
        """Uniform integers in ``[0, high)`` (floor of a scaled uniform)."""
        return np.minimum((self.uniform(size) * high).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        # Argsort of uniforms; ties have probability ~2^-53 and break stably.
        return np.argsort(self.uniform(n), kind="stable")

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        return self.permutation(n)[:k]

    def generator(self) -> np.random.Generator:
        """A numpy Generator sharing this stream's bit generator."""
        return np.random.Generator(self._bitgen)


def substream(seed: int, *labels: int | str) -> Stream:
    """Derive a stream from a seed and an arbitrary label path.

    Used where many independent sub-streams are needed (one per Monte Carlo
    trial, one per offspring). The label path is hashed into the stream id.
    """
    h = hashlib.sha256(repr((int(seed),) + tuple(labels)).encode()).digest()
    return Stream(seed, int.from_bytes(h[:8], "little"))


def digest_uniform(*parts: str) -> float:
    """A uniform in (0, 1) derived from a SHA-256 digest of ``parts``."""
    h = hashlib.sha256("\x1f".join(parts).encode()).digest()
    top = int.from_bytes(h[:8], "little") >> 11
    return (top + 0.5) * _TWO_M53


def digest_normal(*parts: str) -> float:
    return float(ndtri(digest_uniform(*parts)))
