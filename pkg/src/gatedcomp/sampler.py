"""Mastery partition and rho-mixture batch construction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, TypeVar

import numpy as np

from .rewards import SampleState
from .rng import Stream

T = TypeVar("T")


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class MixtureConfig:
    rho: float = 0.1
    batch_size: int = 256

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 1.0:
            raise SamplerError(f"rho must lie in (0, 1), got {self.rho}")
        if self.batch_size < 2:
            raise SamplerError(f"batch_size must be >= 2, got {self.batch_size}")

    @property
    def compressible_quota(self) -> int:
        # round half up
        return int(math.floor(self.rho * self.batch_size + 0.5))


@dataclass(frozen=True)
class Batch:
    sample_ids: tuple
    quota: int
    n_compressible: int
    n_rest: int
    shortfall: int

    def metadata(self) -> dict:
        return {
            "quota": self.quota,
            "compressible": self.n_compressible,
            "rest": self.n_rest,
            "shortfall": self.shortfall,
        }


def partition(states: Sequence[SampleState]) -> tuple[list[SampleState], list[SampleState]]:
    compressible = [s for s in states if s.gate_open]
    rest = [s for s in states if not s.gate_open]
    return compressible, rest


def _take(pool: Sequence[T], k: int, stream: Stream) -> list[T]:
    if k == 0:
        return []
    order = stream.permutation(len(pool))
    return [pool[i] for i in order[:k]]


def draw_batch(compressible: Sequence[T], rest: Sequence[T], cfg: MixtureConfig, stream: Stream) -> Batch:
    """Draw round(rho * B) ids from the compressible pool and the remainder from rest.

    A pool that cannot cover its quota is topped up from the other pool and the
    missing count is reported as ``shortfall``.
    """
    B = cfg.batch_size
    if len(compressible) + len(rest) < B:
        raise SamplerError(f"pools hold {len(compressible) + len(rest)} samples, batch needs {B}")
    if set(compressible) & set(rest):
        raise SamplerError("pools overlap")
    quota = cfg.compressible_quota
    k = min(quota, len(compressible))
    m = B - k
    if m > len(rest):
        m = len(rest)
        k = B - m
    shortfall = abs(quota - k)
    picked = _take(compressible, k, stream) + _take(rest, m, stream)
    return Batch(tuple(picked), quota, k, m, shortfall)


def draw_uniform(pool: Sequence[T], batch_size: int, stream: Stream) -> Batch:
    """Plain uniform batch, used when no compression mixture applies."""
    if len(pool) < batch_size:
        raise SamplerError(f"pool holds {len(pool)} samples, batch needs {batch_size}")
    picked = _take(pool, batch_size, stream)
    return Batch(tuple(picked), 0, 0, batch_size, 0)
