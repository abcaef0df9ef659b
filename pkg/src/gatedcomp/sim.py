"""Synthetic problem population and on-policy rollout generation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng
from .policy import PolicyParams
from .rewards import RolloutRecord


class SimError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemSpec:
    sample_id: str
    difficulty: float
    base_log_length: float
    floor_log_length: float
    domain_tag: Optional[str] = None
    heldout: bool = False

    def __post_init__(self) -> None:
        for name in ("difficulty", "base_log_length", "floor_log_length"):
            if not math.isfinite(getattr(self, name)):
                raise SimError(f"{self.sample_id}: {name} must be finite")


@dataclass(frozen=True)
class SimConfig:
    population_size: int = 1024
    heldout_size: int = 256
    rollouts_per_sample: int = 8
    context_cap: int = 65536
    seed: int = 0
    exploration_scale: float = 1.0
    eval_exploration_scale: float = 0.6
    eval_rollouts: int = 32
    length_center: float = math.log(12000.0)
    length_spread: float = 0.35
    length_difficulty_slope: float = 0.12
    initial_sigma: float = 0.35
    slack_low: float = 0.35
    slack_high: float = 2.5
    coupling: float = 30.0
    softness: float = 0.05
    # Placeholder for a length/correctness correlation knob; only 0 is supported.
    length_correctness_correlation: float = 0.0

    def __post_init__(self) -> None:
        if self.population_size < 1:
            raise SimError("population_size must be >= 1")
        if self.heldout_size < 0:
            raise SimError("heldout_size must be >= 0")
        if self.rollouts_per_sample < 2:
            raise SimError("rollouts_per_sample must be >= 2")
        if self.context_cap < 1:
            raise SimError("context_cap must be >= 1")
        if self.exploration_scale <= 0 or self.eval_exploration_scale <= 0:
            raise SimError("exploration scales must be positive")
        if self.eval_rollouts < 1:
            raise SimError("eval_rollouts must be >= 1")
        if self.slack_low > self.slack_high:
            raise SimError("slack_low must not exceed slack_high")
        if self.length_correctness_correlation != 0.0:
            raise SimError("length_correctness_correlation is not implemented; leave it at 0")


@dataclass(frozen=True)
class DifficultyProfile:
    """Mixture over mastered / learnable / hard problems with uniform logit ranges."""

    mastered: float = 1 / 3
    learnable: float = 1 / 3
    hard: float = 1 / 3
    mastered_logits: tuple[float, float] = (3.0, 6.0)
    learnable_logits: tuple[float, float] = (-1.5, 3.0)
    hard_logits: tuple[float, float] = (-5.0, -1.5)

    def __post_init__(self) -> None:
        weights = (self.mastered, self.learnable, self.hard)
        if any(w < 0 for w in weights) or not math.isclose(sum(weights), 1.0, abs_tol=1e-9):
            raise SimError(f"profile weights must be non-negative and sum to 1, got {weights}")
        for lo, hi in (self.mastered_logits, self.learnable_logits, self.hard_logits):
            if lo > hi:
                raise SimError(f"bad logit range ({lo}, {hi})")

    @classmethod
    def constant(cls, logit: float) -> "DifficultyProfile":
        return cls(1.0, 0.0, 0.0, (logit, logit), (logit, logit), (logit, logit))


PROFILES = {
    "uniform": DifficultyProfile(),
    "mastered-heavy": DifficultyProfile(0.6, 0.25, 0.15),
    "hard-heavy": DifficultyProfile(0.15, 0.25, 0.6),
    "all-mastered": DifficultyProfile.constant(10.0),
    "all-impossible": DifficultyProfile.constant(-10.0),
}


def get_profile(profile) -> DifficultyProfile:
    if isinstance(profile, DifficultyProfile):
        return profile
    try:
        return PROFILES[profile]
    except KeyError:
        raise SimError(f"unknown difficulty profile {profile!r}; choose from {sorted(PROFILES)}") from None


def _draw_problems(cfg: SimConfig, profile: DifficultyProfile, count: int, prefix: str, heldout: bool):
    stream = rng.Stream.derive(cfg.seed, "population", prefix)
    u_class = stream.uniform(count)
    u_logit = stream.uniform(count)
    u_slack = stream.uniform(count)
    z_len = stream.normal(count)
    ranges = np.array([profile.mastered_logits, profile.learnable_logits, profile.hard_logits])
    edges = np.cumsum([profile.mastered, profile.learnable])
    cls = np.searchsorted(edges, u_class, side="right").clip(0, 2)
    lo, hi = ranges[cls, 0], ranges[cls, 1]
    logit = lo + (hi - lo) * u_logit
    # harder problems start with longer reasoning
    base = cfg.length_center + cfg.length_spread * z_len - cfg.length_difficulty_slope * logit
    slack = cfg.slack_low + (cfg.slack_high - cfg.slack_low) * u_slack
    width = max(3, len(str(count - 1)))
    return [
        ProblemSpec(f"{prefix}{i:0{width}d}", float(logit[i]), float(base[i]), float(base[i] - slack[i]), heldout=heldout)
        for i in range(count)
    ]


def init_population(cfg: SimConfig, difficulty_profile="uniform") -> tuple[list[ProblemSpec], PolicyParams]:
    """Training problems followed by held-out problems, and the initial policy."""
    profile = get_profile(difficulty_profile)
    problems = _draw_problems(cfg, profile, cfg.population_size, "p", False)
    if cfg.heldout_size:
        problems += _draw_problems(cfg, profile, cfg.heldout_size, "h", True)
    params = PolicyParams(
        sample_ids=[p.sample_id for p in problems],
        logit=[p.difficulty for p in problems],
        log_length=[p.base_log_length for p in problems],
        floor=[p.floor_log_length for p in problems],
        sigma=cfg.initial_sigma,
        coupling=cfg.coupling,
        softness=cfg.softness,
    )
    return problems, params


def sample_base_keys(seed: int, purpose: str, sample_ids: Sequence[str]) -> np.ndarray:
    return np.array([rng.derive_key(seed, purpose, sid) for sid in sample_ids], dtype=np.uint64)


def step_keys(base_keys: np.ndarray, step: int) -> np.ndarray:
    """Per-sample stream keys for one step: a function of (seed, sample id, step) only."""
    return rng.bits(base_keys, np.uint64(step))


def rollout_key(seed: int, sample_id: str, step: int) -> int:
    return int(step_keys(sample_base_keys(seed, "rollout", [sample_id]), step)[0])


@dataclass
class RolloutBlock:
    """Rollouts for G problems x n draws, as arrays."""

    index: np.ndarray
    length: np.ndarray
    correct: np.ndarray
    censored: np.ndarray

    def records(self, params: PolicyParams, step: int) -> list[list[RolloutRecord]]:
        out = []
        for g, i in enumerate(self.index):
            sid = params.sample_ids[i]
            out.append(
                [RolloutRecord(sid, step, int(l), int(c)) for l, c in zip(self.length[g], self.correct[g])]
            )
        return out


def sample_block(
    params: PolicyParams,
    idx: np.ndarray,
    keys: np.ndarray,
    n: int,
    context_cap: int,
    exploration_scale: float = 1.0,
) -> RolloutBlock:
    """Draw n rollouts for each problem in ``idx`` from its own keyed stream."""
    if n < 2:
        raise SimError("need at least 2 rollouts per sample")
    idx = np.asarray(idx, dtype=np.int64)
    keys = np.asarray(keys, dtype=np.uint64)[:, None]
    counters = np.arange(2 * n, dtype=np.uint64)[None, :]
    u = rng.uniform(keys, counters)
    p = params.success_prob(idx)[:, None]
    correct = (u[:, :n] < p).astype(np.int64)
    loc = params.length_loc(idx)[:, None]
    log_x = loc + params.sigma * exploration_scale * rng.ndtri(u[:, n:])
    with np.errstate(over="ignore"):
        raw = np.ceil(np.exp(np.minimum(log_x, 700.0)))
    raw = np.maximum(raw, 1.0)
    # a generation that reaches the cap is cut off and cannot be verified
    censored = raw >= context_cap
    length = np.where(censored, context_cap, raw).astype(np.int64)
    correct = np.where(censored, 0, correct)
    return RolloutBlock(idx, length, correct, censored)


def sample_rollouts(
    params: PolicyParams,
    problem: ProblemSpec,
    n: int,
    stream_key: int,
    context_cap: int = 65536,
    exploration_scale: float = 1.0,
    step: int = 0,
) -> list[RolloutRecord]:
    i = params.index_of(problem.sample_id)
    block = sample_block(params, np.array([i]), np.array([stream_key], dtype=np.uint64), n, context_cap, exploration_scale)
    return block.records(params, step)[0]


@dataclass(frozen=True)
class EvalMetrics:
    accuracy: float
    mean_length: float
    min_length: int
    max_length: int
    draws: int


def evaluate(
    params: PolicyParams,
    problems: Sequence[ProblemSpec],
    eval_rollouts: int,
    stream_key: int,
    exploration_scale: float = 0.6,
    context_cap: int = 65536,
) -> EvalMetrics:
    if not problems:
        raise SimError("no problems to evaluate")
    if eval_rollouts < 1:
        raise SimError("eval_rollouts must be >= 1")
    idx = params.indices(p.sample_id for p in problems)
    base = sample_base_keys(0, "eval", [p.sample_id for p in problems])
    keys = rng.bits(base, np.uint64(stream_key))
    n = max(eval_rollouts, 2)
    block = sample_block(params, idx, keys, n, context_cap, exploration_scale)
    length = block.length[:, :eval_rollouts]
    correct = block.correct[:, :eval_rollouts]
    return EvalMetrics(
        accuracy=float(correct.mean()),
        mean_length=float(length.mean()),
        min_length=int(length.min()),
        max_length=int(length.max()),
        draws=int(length.size),
    )
