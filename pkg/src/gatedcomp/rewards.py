"""Reward shaping for mastery-gated, sample-level length compression.

All functions here are pure. Lengths are integer token counts; reward
arithmetic is done in double precision.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np


class RewardError(ValueError):
    """Raised when a reward function receives inputs outside its contract."""


@dataclass(frozen=True)
class RolloutRecord:
    sample_id: str
    step: int
    length: int
    correct: int
    text: Optional[str] = None

    def __post_init__(self) -> None:
        if self.length < 1:
            raise RewardError(f"rollout length must be >= 1, got {self.length}")
        if self.correct not in (0, 1):
            raise RewardError(f"correct must be 0 or 1, got {self.correct!r}")
        if self.step < 0:
            raise RewardError(f"step must be >= 0, got {self.step}")


@dataclass(frozen=True)
class LengthTargets:
    l_start: int
    l_max: int

    def __post_init__(self) -> None:
        if self.l_start > self.l_max:
            raise RewardError(f"l_start {self.l_start} exceeds l_max {self.l_max}")

    @property
    def degenerate(self) -> bool:
        return self.l_start == self.l_max


@dataclass(frozen=True)
class SampleState:
    sample_id: str
    rollouts: tuple[RolloutRecord, ...]
    passrate: Fraction
    gate_open: bool
    targets: Optional[LengthTargets]


def compute_passrate(rewards: Sequence[int]) -> Fraction:
    if len(rewards) == 0:
        raise RewardError("no rollouts for sample")
    return Fraction(sum(int(r) for r in rewards), len(rewards))


def lower_median(values: Sequence[int]) -> int:
    ordered = sorted(values)
    # index ceil(n/2) - 1
    return ordered[(len(ordered) + 1) // 2 - 1]


def compute_length_targets(rollouts: Sequence[RolloutRecord]) -> LengthTargets:
    """Safe length (lower median) and penalty bound (max) over correct rollouts."""
    if not rollouts:
        raise RewardError("no correct rollouts: the mastery gate is not open")
    if any(r.correct != 1 for r in rollouts):
        raise RewardError("length targets are defined over correct rollouts only")
    lengths = [r.length for r in rollouts]
    return LengthTargets(l_start=lower_median(lengths), l_max=max(lengths))


def build_sample_state(sample_id: str, rollouts: Iterable[RolloutRecord]) -> SampleState:
    rollouts = tuple(rollouts)
    n_correct = sum(r.correct for r in rollouts)
    passrate = compute_passrate([r.correct for r in rollouts])
    # exact integer test, never a float comparison
    gate_open = n_correct == len(rollouts)
    targets = compute_length_targets(rollouts) if gate_open else None
    return SampleState(sample_id, rollouts, passrate, gate_open, targets)


def _piecewise(length: float, start: float, stop: float) -> float:
    if length <= start:
        return 0.0
    if length > stop:
        return -1.0
    return -(length - start) / (stop - start)


def soft_length_penalty(length: int, targets: LengthTargets) -> float:
    """Piecewise-linear deduction in [-1, 0]; identically 0 for degenerate targets."""
    if targets.degenerate:
        return 0.0
    return _piecewise(float(length), float(targets.l_start), float(targets.l_max))


def shaped_reward(correct: int, gate_open: bool, penalty: float) -> float:
    if not gate_open and penalty != 0.0:
        raise RewardError(f"gate is closed but penalty is {penalty}")
    return float(correct) + (penalty if gate_open else 0.0)


def global_soft_penalty(length: int, l_start_global: int, l_max_global: int) -> float:
    """Ungated penalty with fixed bounds, applied to every rollout."""
    if l_start_global >= l_max_global:
        raise RewardError(
            f"global penalty needs l_start < l_max, got {l_start_global} >= {l_max_global}"
        )
    return _piecewise(float(length), float(l_start_global), float(l_max_global))


def hard_truncate(rollout: RolloutRecord, target: int) -> RolloutRecord:
    """Cut an over-target rollout to ``target`` tokens; a cut answer counts as wrong."""
    if target < 1:
        raise RewardError(f"truncation target must be >= 1, got {target}")
    if rollout.length <= target:
        return rollout
    return replace(rollout, length=target, correct=0)


def shape_group(rollouts: Sequence[RolloutRecord]) -> tuple[SampleState, list[float], list[float]]:
    """Gate, targets, per-rollout penalties and shaped rewards for one sample group."""
    if not rollouts:
        raise RewardError("no rollouts for sample")
    state = build_sample_state(rollouts[0].sample_id, rollouts)
    if state.gate_open:
        penalties = [soft_length_penalty(r.length, state.targets) for r in rollouts]
    else:
        penalties = [0.0] * len(rollouts)
    shaped = [shaped_reward(r.correct, state.gate_open, p) for r, p in zip(rollouts, penalties)]
    return state, penalties, shaped


# Vectorized forms used by the simulator. They must agree exactly with the
# scalar functions above; tests/test_rewards.py checks this.

def group_targets_array(lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lower-median and max per row of an (groups, n) length array."""
    ordered = np.sort(lengths, axis=1)
    n = lengths.shape[1]
    return ordered[:, (n + 1) // 2 - 1], ordered[:, -1]


def soft_penalty_array(lengths: np.ndarray, l_start: np.ndarray, l_max: np.ndarray) -> np.ndarray:
    lengths = np.asarray(lengths, dtype=np.float64)
    start = np.asarray(l_start, dtype=np.float64)
    stop = np.asarray(l_max, dtype=np.float64)
    span = np.where(stop > start, stop - start, 1.0)
    out = np.where(lengths > stop, -1.0, -(lengths - start) / span)
    out = np.where(lengths <= start, 0.0, out)
    return np.where(stop > start, out, 0.0)


def gated_rewards_array(lengths: np.ndarray, correct: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shaped rewards for an (groups, n) block: returns (gate, penalty, reward)."""
    correct = np.asarray(correct, dtype=np.int64)
    gate = correct.sum(axis=1) == correct.shape[1]
    l_start, l_max = group_targets_array(lengths)
    penalty = soft_penalty_array(lengths, l_start[:, None], l_max[:, None])
    penalty = np.where(gate[:, None], penalty, 0.0)
    return gate, penalty, correct + penalty
