"""Accuracy -> compression -> accuracy stage control with early stopping.

Accuracies in the evaluation history are in percentage points, the same unit
as ``EarlyStopRule.delta``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .rewards import RolloutRecord, SampleState, shaped_reward, soft_length_penalty


class StageKind(str, enum.Enum):
    ACCURACY = "accuracy"
    COMPRESSION = "compression"


class CurriculumError(ValueError):
    pass


@dataclass(frozen=True)
class StageConfig:
    kind: StageKind
    max_steps: int
    eval_every: int = 5

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", StageKind(self.kind))
        if self.max_steps < 0:
            raise CurriculumError(f"max_steps must be >= 0, got {self.max_steps}")
        if self.eval_every < 1:
            raise CurriculumError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.max_steps and self.eval_every > self.max_steps:
            raise CurriculumError(f"eval_every {self.eval_every} exceeds max_steps {self.max_steps}")


@dataclass(frozen=True)
class EarlyStopRule:
    delta: float = 1.0
    patience: int = 2
    window: int = 3

    def __post_init__(self) -> None:
        if not self.delta > 0:
            raise CurriculumError("delta must be positive")
        if self.patience < 1 or self.window < 1:
            raise CurriculumError("patience and window must be >= 1")


@dataclass(frozen=True)
class EvalPoint:
    step: int
    accuracy: float
    mean_length: float


def windowed_accuracy(history: Sequence[EvalPoint], window: int) -> np.ndarray:
    """Trailing moving average; entry k covers evals k-window+1..k (NaN before that)."""
    acc = np.array([h.accuracy for h in history], dtype=np.float64)
    out = np.full(acc.shape, np.nan)
    if len(acc) >= window:
        csum = np.concatenate([[0.0], np.cumsum(acc)])
        out[window - 1 :] = (csum[window:] - csum[:-window]) / window
    return out


def early_stop_check(history: Sequence[EvalPoint], rule: EarlyStopRule) -> bool:
    """True once windowed accuracy sits more than ``delta`` below its running
    max for ``patience`` consecutive evals while mean length keeps falling."""
    if len(history) < rule.window + rule.patience:
        return False
    ma = windowed_accuracy(history, rule.window)
    running = np.fmax.accumulate(ma)
    for k in range(len(history) - rule.patience, len(history)):
        if not ma[k] < running[k] - rule.delta:
            return False
        if not history[k].mean_length < history[k - 1].mean_length:
            return False
    return True


def best_index(history: Sequence[EvalPoint], rule: EarlyStopRule) -> int:
    """Index of the eval with the highest windowed accuracy (latest on ties)."""
    if not history:
        raise CurriculumError("empty evaluation history")
    ma = windowed_accuracy(history, min(rule.window, len(history)))
    valid = np.where(np.isnan(ma), -np.inf, ma)
    top = valid.max()
    return int(np.flatnonzero(valid == top)[-1])


class Decision(str, enum.Enum):
    CONTINUE = "continue"
    ADVANCE = "advance_stage"
    STOP_RESTORE = "stop_loop_restore"


@dataclass(frozen=True)
class StageDecision:
    kind: Decision
    restore_step: Optional[int] = None
    reason: str = ""


@dataclass
class CurriculumState:
    schedule: tuple[StageConfig, ...]
    stage_index: int = 0
    step_in_stage: int = 0
    loop_index: int = 0
    eval_history: list = field(default_factory=list)
    best_accuracy_so_far: float = float("-inf")
    early_stopped: bool = False
    finished: bool = False

    def __post_init__(self) -> None:
        self.schedule = tuple(self.schedule)
        if not self.schedule:
            raise CurriculumError("empty stage schedule")
        self._skip_empty()

    @property
    def current_stage(self) -> StageConfig:
        return self.schedule[self.stage_index]

    def record_eval(self, point: EvalPoint) -> None:
        if self.eval_history and point.step <= self.eval_history[-1].step:
            raise CurriculumError(f"eval step {point.step} does not advance the history")
        self.eval_history.append(point)
        self.best_accuracy_so_far = max(self.best_accuracy_so_far, point.accuracy)

    def advance(self) -> None:
        """Move to the next non-empty stage, counting completed loops."""
        done = self.current_stage
        if done.kind is StageKind.ACCURACY and self._after_compression():
            self.loop_index += 1
        self.stage_index += 1
        self.step_in_stage = 0
        self.eval_history = []
        self.best_accuracy_so_far = float("-inf")
        self._skip_empty()

    def _after_compression(self) -> bool:
        kinds = [s.kind for s in self.schedule[: self.stage_index] if s.max_steps > 0]
        return bool(kinds) and kinds[-1] is StageKind.COMPRESSION

    def _skip_empty(self) -> None:
        while self.stage_index < len(self.schedule) and self.schedule[self.stage_index].max_steps == 0:
            self.stage_index += 1
        if self.stage_index >= len(self.schedule):
            self.finished = True
            self.stage_index = len(self.schedule) - 1

    def to_dict(self) -> dict:
        return {
            "schedule": [[s.kind.value, s.max_steps, s.eval_every] for s in self.schedule],
            "stage_index": self.stage_index,
            "step_in_stage": self.step_in_stage,
            "loop_index": self.loop_index,
            "eval_history": [[h.step, h.accuracy, h.mean_length] for h in self.eval_history],
            "best_accuracy_so_far": self.best_accuracy_so_far,
            "early_stopped": self.early_stopped,
            "finished": self.finished,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CurriculumState":
        state = cls(tuple(StageConfig(StageKind(k), m, e) for k, m, e in d["schedule"]))
        state.stage_index = d["stage_index"]
        state.step_in_stage = d["step_in_stage"]
        state.loop_index = d["loop_index"]
        state.eval_history = [EvalPoint(int(s), float(a), float(l)) for s, a, l in d["eval_history"]]
        state.best_accuracy_so_far = d["best_accuracy_so_far"]
        state.early_stopped = d["early_stopped"]
        state.finished = d["finished"]
        return state


def stage_step(
    state: CurriculumState,
    latest_eval: Optional[EvalPoint],
    rule: Optional[EarlyStopRule] = None,
) -> StageDecision:
    """Account for one finished training step and decide what happens next.

    Pass ``rule=None`` to run compression stages without early stopping.
    The caller applies the decision (restore params, then ``state.advance()``).
    """
    if state.finished:
        raise CurriculumError("curriculum already finished")
    state.step_in_stage += 1
    if latest_eval is not None:
        state.record_eval(latest_eval)
    stage = state.current_stage
    if stage.kind is StageKind.COMPRESSION and rule is not None and latest_eval is not None:
        if early_stop_check(state.eval_history, rule):
            state.early_stopped = True
            best = state.eval_history[best_index(state.eval_history, rule)]
            return StageDecision(Decision.STOP_RESTORE, best.step, "early_stop")
    if state.step_in_stage >= stage.max_steps:
        return StageDecision(Decision.ADVANCE, None, "max_steps")
    return StageDecision(Decision.CONTINUE)


def effective_reward(stage_kind: StageKind, sample_state: SampleState, rollout: RolloutRecord) -> float:
    """Binary correctness in accuracy stages; gated shaped reward in compression stages."""
    if StageKind(stage_kind) is StageKind.ACCURACY:
        return float(rollout.correct)
    if sample_state.gate_open:
        penalty = soft_length_penalty(rollout.length, sample_state.targets)
    else:
        penalty = 0.0
    return shaped_reward(rollout.correct, sample_state.gate_open, penalty)
