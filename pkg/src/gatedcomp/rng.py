"""Counter-based random streams.

Every draw is a pure function of (stream key, counter), so rollouts for
different samples can be generated in any order, or in parallel, and still
come out bit-identical. Keys are derived from the run seed plus labels such
as a sample id and a step index.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / float(1 << 53)


def derive_key(seed: int, *labels: object) -> int:
    """Stable 64-bit key for a stream. Never uses Python's salted hash()."""
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", int(seed) & 0xFFFFFFFFFFFFFFFF))
    for label in labels:
        raw = str(label).encode("utf-8")
        h.update(struct.pack("<I", len(raw)))
        h.update(raw)
    return int.from_bytes(h.digest(), "little")


def _mix(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def bits(keys, counters) -> np.ndarray:
    """Raw 64-bit outputs; ``keys`` and ``counters`` broadcast against each other."""
    k = np.asarray(keys, dtype=np.uint64)
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(_mix(k + c * _GOLDEN) ^ k)


def uniform(keys, counters) -> np.ndarray:
    """Doubles in the open interval (0, 1)."""
    return ((bits(keys, counters) >> np.uint64(11)).astype(np.float64) + 0.5) * _INV53


def normal(keys, counters) -> np.ndarray:
    return ndtri(uniform(keys, counters))


class Stream:
    """A single keyed stream with a cursor, for sequential consumers."""

    def __init__(self, key: int, cursor: int = 0):
        self.key = int(key)
        self.cursor = int(cursor)

    @classmethod
    def derive(cls, seed: int, *labels: object) -> "Stream":
        return cls(derive_key(seed, *labels))

    def _take(self, n: int) -> np.ndarray:
        counters = np.arange(self.cursor, self.cursor + n, dtype=np.uint64)
        self.cursor += n
        return counters

    def uniform(self, n: int) -> np.ndarray:
        return uniform(np.uint64(self.key), self._take(n))

    def normal(self, n: int) -> np.ndarray:
        return normal(np.uint64(self.key), self._take(n))

    def permutation(self, n: int) -> np.ndarray:
        # sort by independent uniforms: a uniformly random permutation
        return np.argsort(self.uniform(n), kind="stable")
