"""Synthetic per-sample policy and group-relative policy-gradient updates.

Each problem i has a correctness logit ``a_i`` and a log-length location
``mu_i``. Two shared offsets carry what a real network would share across
problems: ``skill`` adds to every logit and ``verbosity`` adds to every
log-length. A rollout's length is ``ceil(X)`` with ``X ~ LogNormal(mu_i +
verbosity, sigma * exploration_scale)``, so log-probabilities are exact
probability masses computed from CDF differences.

Correctness is drawn independently of the realized length, but its
probability depends on the policy's length location: reasoning budgets
below a problem's ``floor`` (in log tokens) cost ``coupling`` logits per nat
of shortfall, smoothed with a softplus of width ``softness``. This is what
makes over-compression harmful.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import expit, log_ndtr

from .rewards import RolloutRecord

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
MIN_SIGMA = 1e-3


class AdvantageMode(str, enum.Enum):
    GRPO = "grpo_std_normalized"
    DRGRPO = "drgrpo_mean_baseline"


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class ClipBounds:
    clip_low: float = 0.2
    clip_high: float = 0.27

    def __post_init__(self) -> None:
        if not self.clip_low > 0:
            raise PolicyError(f"clip_low must be > 0, got {self.clip_low}")
        if self.clip_high < self.clip_low:
            raise PolicyError(f"clip_high {self.clip_high} < clip_low {self.clip_low}")


@dataclass
class PolicyParams:
    sample_ids: tuple[str, ...]
    logit: np.ndarray
    log_length: np.ndarray
    floor: np.ndarray
    sigma: float
    skill: float = 0.0
    verbosity: float = 0.0
    coupling: float = 30.0
    softness: float = 0.05
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.sample_ids = tuple(self.sample_ids)
        self.logit = np.asarray(self.logit, dtype=np.float64)
        self.log_length = np.asarray(self.log_length, dtype=np.float64)
        self.floor = np.asarray(self.floor, dtype=np.float64)
        if not self.sigma > 0:
            raise PolicyError(f"sigma must be positive, got {self.sigma}")
        n = len(self.sample_ids)
        if not (self.logit.shape == self.log_length.shape == self.floor.shape == (n,)):
            raise PolicyError("per-sample parameter arrays must match sample_ids")
        self._index = {sid: i for i, sid in enumerate(self.sample_ids)}
        if len(self._index) != n:
            raise PolicyError("duplicate sample ids")

    def index_of(self, sample_id: str) -> int:
        try:
            return self._index[sample_id]
        except KeyError:
            raise PolicyError(f"unknown sample_id {sample_id!r}") from None

    def indices(self, sample_ids: Iterable[str]) -> np.ndarray:
        return np.array([self.index_of(s) for s in sample_ids], dtype=np.int64)

    def copy(self) -> "PolicyParams":
        return replace(
            self,
            logit=self.logit.copy(),
            log_length=self.log_length.copy(),
            floor=self.floor.copy(),
        )

    def length_loc(self, idx) -> np.ndarray:
        return self.log_length[idx] + self.verbosity

    def shortfall(self, idx) -> np.ndarray:
        return (self.floor[idx] - self.length_loc(idx)) / self.softness

    def correctness_logit(self, idx) -> np.ndarray:
        z = self.shortfall(idx)
        return self.logit[idx] + self.skill - self.coupling * self.softness * np.logaddexp(0.0, z)

    def success_prob(self, idx) -> np.ndarray:
        return expit(self.correctness_logit(idx))

    def state_dict(self) -> dict:
        return {
            "sample_ids": list(self.sample_ids),
            "logit": self.logit.tolist(),
            "log_length": self.log_length.tolist(),
            "floor": self.floor.tolist(),
            "sigma": self.sigma,
            "skill": self.skill,
            "verbosity": self.verbosity,
            "coupling": self.coupling,
            "softness": self.softness,
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "PolicyParams":
        return cls(**d)


def _log_mass(z0: np.ndarray, z1: np.ndarray) -> np.ndarray:
    """log(Phi(z1) - Phi(z0)) for z0 < z1, stable in both tails."""
    upper = z0 > 0
    hi = np.where(upper, log_ndtr(-z0), log_ndtr(z1))
    lo = np.where(upper, log_ndtr(-z1), log_ndtr(z0))
    with np.errstate(divide="ignore"):
        return hi + np.log(-np.expm1(lo - hi))


def _log_phi(z: np.ndarray) -> np.ndarray:
    return -0.5 * z * z - _LOG_SQRT_2PI


@dataclass
class LogProbGrad:
    """Per-rollout log-probabilities and their partial derivatives."""

    log_prob: np.ndarray
    d_logit: np.ndarray  # also the derivative w.r.t. skill
    d_loc: np.ndarray  # also the derivative w.r.t. verbosity
    d_sigma: np.ndarray


def log_prob_and_grad(
    params: PolicyParams,
    idx: np.ndarray,
    lengths: np.ndarray,
    correct: np.ndarray,
    censored: Optional[np.ndarray] = None,
    exploration_scale: float = 1.0,
) -> LogProbGrad:
    """Vectorized rollout log-likelihood with closed-form score functions.

    A censored rollout is one cut off at its recorded length (context cap or
    truncation); its likelihood is the tail mass P(L >= length) and it carries
    no correctness term.
    """
    idx = np.asarray(idx, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    if censored is None:
        censored = np.zeros(lengths.shape, dtype=bool)
    censored = np.asarray(censored, dtype=bool)

    spread = params.sigma * exploration_scale
    loc = params.length_loc(idx)
    first = lengths <= 1.0
    with np.errstate(divide="ignore"):
        log_prev = np.where(first, -np.inf, np.log(np.maximum(lengths - 1.0, 1.0)))
    z0 = np.where(first, -np.inf, (log_prev - loc) / spread)
    z1 = (np.log(lengths) - loc) / spread
    phi0 = np.where(first, -np.inf, _log_phi(np.where(first, 0.0, z0)))
    phi1 = _log_phi(z1)
    z0_safe = np.where(first, 0.0, z0)

    # point mass on the integer bin (l-1, l]
    lp_len = _log_mass(z0, z1)
    w0 = np.exp(phi0 - lp_len)
    w1 = np.exp(phi1 - lp_len)
    dm_len = (w0 - w1) / spread
    ds_len = (z0_safe * w0 - z1 * w1) / spread

    # tail mass P(X > l-1)
    lp_tail = np.where(first, 0.0, log_ndtr(-z0_safe))
    wt = np.where(first, 0.0, np.exp(phi0 - lp_tail))
    dm_tail = wt / spread
    ds_tail = z0_safe * wt / spread

    a_eff = params.correctness_logit(idx)
    p = expit(a_eff)
    lp_cor = np.where(correct > 0.5, -np.logaddexp(0.0, -a_eff), -np.logaddexp(0.0, a_eff))
    da = correct - p
    dloc_cor = da * params.coupling * expit(params.shortfall(idx))

    log_prob = np.where(censored, lp_tail, lp_len + lp_cor)
    d_logit = np.where(censored, 0.0, da)
    d_loc = np.where(censored, dm_tail, dm_len + dloc_cor)
    d_sigma = np.where(censored, ds_tail, ds_len) * exploration_scale
    return LogProbGrad(log_prob, d_logit, d_loc, d_sigma)


def rollout_log_prob(
    params: PolicyParams,
    rollout: RolloutRecord,
    exploration_scale: float = 1.0,
    context_cap: Optional[int] = None,
    censored: Optional[bool] = None,
) -> float:
    i = params.index_of(rollout.sample_id)
    if censored is None:
        censored = context_cap is not None and rollout.length >= context_cap
    out = log_prob_and_grad(
        params,
        np.array([i]),
        np.array([rollout.length]),
        np.array([rollout.correct]),
        np.array([censored]),
        exploration_scale,
    )
    return float(out.log_prob[0])


def group_advantages(shaped_rewards: Sequence[float], mode: AdvantageMode = AdvantageMode.DRGRPO) -> np.ndarray:
    r = np.asarray(shaped_rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise PolicyError("group advantages need at least 2 rollouts")
    return group_advantages_array(r[None, :], mode)[0]


def group_advantages_array(rewards: np.ndarray, mode: AdvantageMode) -> np.ndarray:
    """Row-wise advantages for a (groups, n) reward block."""
    mode = AdvantageMode(mode)
    rewards = np.asarray(rewards, dtype=np.float64)
    # statistics over sorted rows, so permuting a group permutes its
    # advantages bit for bit
    ordered = np.sort(rewards, axis=1)
    n = rewards.shape[1]
    mean = ordered.sum(axis=1, keepdims=True) / n
    centered = rewards - mean
    if mode is AdvantageMode.DRGRPO:
        return centered
    std = np.sqrt(np.sum((ordered - mean) ** 2, axis=1, keepdims=True) / n)
    safe = np.where(std > 0, std, 1.0)
    return np.where(std > 0, centered / safe, 0.0)


@dataclass
class UpdateBatch:
    """Flattened rollouts for one optimizer step.

    ``group`` numbers the sample groups 0..G-1; per-sample parameters see the
    mean gradient of their own group and shared parameters the mean over groups.
    """

    index: np.ndarray
    group: np.ndarray
    length: np.ndarray
    correct: np.ndarray
    advantage: np.ndarray
    old_log_prob: np.ndarray
    censored: np.ndarray

    @classmethod
    def from_items(
        cls,
        params: PolicyParams,
        items: Sequence[tuple[str, RolloutRecord, float, float]],
        context_cap: Optional[int] = None,
    ) -> "UpdateBatch":
        groups: dict[str, int] = {}
        index, group, length, correct, adv, old, cens = [], [], [], [], [], [], []
        for sample_id, rollout, advantage, old_log_prob in items:
            index.append(params.index_of(sample_id))
            group.append(groups.setdefault(sample_id, len(groups)))
            length.append(rollout.length)
            correct.append(rollout.correct)
            adv.append(advantage)
            old.append(old_log_prob)
            cens.append(context_cap is not None and rollout.length >= context_cap)
        return cls(
            np.array(index, dtype=np.int64),
            np.array(group, dtype=np.int64),
            np.array(length, dtype=np.int64),
            np.array(correct, dtype=np.int64),
            np.array(adv, dtype=np.float64),
            np.array(old, dtype=np.float64),
            np.array(cens, dtype=bool),
        )


@dataclass(frozen=True)
class StepScales:
    """Step-size multipliers per parameter group; 0 freezes a group.

    The shared scales set how strongly what is learned on the batch transfers
    to every other problem.
    """

    logit: float = 1.0
    log_length: float = 1.0
    skill: float = 1.0
    verbosity: float = 1.0
    sigma: float = 1.0


@dataclass
class UpdateInfo:
    grad_norm: float
    clip_fraction: float
    ratio_min: float
    ratio_max: float


def surrogate_gradient(
    params: PolicyParams,
    batch: UpdateBatch,
    clip: ClipBounds,
    exploration_scale: float = 1.0,
) -> tuple[dict, np.ndarray, np.ndarray]:
    """Gradient of the clipped surrogate; returns (grads, ratio, active mask)."""
    lp = log_prob_and_grad(
        params, batch.index, batch.length, batch.correct, batch.censored, exploration_scale
    )
    ratio = np.exp(lp.log_prob - batch.old_log_prob)
    adv = batch.advantage
    # the min() picks the clipped constant branch once the ratio leaves the
    # trust region in the direction the advantage pushes
    active = ~(((adv > 0) & (ratio > 1.0 + clip.clip_high)) | ((adv < 0) & (ratio < 1.0 - clip.clip_low)))
    coef = np.where(active, adv * ratio, 0.0)

    n_groups = int(batch.group.max()) + 1 if batch.group.size else 0
    group_size = np.bincount(batch.group, minlength=n_groups).astype(np.float64)
    w = coef / group_size[batch.group]

    n = len(params.sample_ids)
    g_logit = np.bincount(batch.index, weights=w * lp.d_logit, minlength=n)
    g_loc = np.bincount(batch.index, weights=w * lp.d_loc, minlength=n)
    shared = 1.0 / max(n_groups, 1)
    grads = {
        "logit": g_logit,
        "log_length": g_loc,
        "skill": float(np.sum(w * lp.d_logit) * shared),
        "verbosity": float(np.sum(w * lp.d_loc) * shared),
        "sigma": float(np.sum(w * lp.d_sigma) * shared),
    }
    return grads, ratio, active


def grad_norm(grads: dict) -> float:
    return math.sqrt(
        float(np.sum(grads["logit"] ** 2))
        + float(np.sum(grads["log_length"] ** 2))
        + grads["skill"] ** 2
        + grads["verbosity"] ** 2
        + grads["sigma"] ** 2
    )


def update_step(
    params: PolicyParams,
    batch: UpdateBatch,
    lr: float,
    clip: ClipBounds,
    exploration_scale: float = 1.0,
    epochs: int = 1,
    scales: Optional["StepScales"] = None,
) -> tuple[PolicyParams, UpdateInfo]:
    if not lr > 0:
        raise PolicyError(f"learning rate must be positive, got {lr}")
    scales = scales or StepScales()
    new = params.copy()
    norms, clipped, rmin, rmax = [], 0.0, math.inf, -math.inf
    for _ in range(max(1, epochs)):
        grads, ratio, active = surrogate_gradient(new, batch, clip, exploration_scale)
        norm = grad_norm(grads)
        if not math.isfinite(norm):
            bad = [k for k, v in grads.items() if not np.all(np.isfinite(v))]
            raise FloatingPointError(f"non-finite gradient in {bad}; sigma={new.sigma:.4g}")
        norms.append(norm)
        if ratio.size:
            clipped = max(clipped, float(np.mean(~active)))
            rmin, rmax = min(rmin, float(ratio.min())), max(rmax, float(ratio.max()))
        new.logit = new.logit + lr * scales.logit * grads["logit"]
        new.log_length = new.log_length + lr * scales.log_length * grads["log_length"]
        new.skill += lr * scales.skill * grads["skill"]
        new.verbosity += lr * scales.verbosity * grads["verbosity"]
        new.sigma = max(MIN_SIGMA, new.sigma + lr * scales.sigma * grads["sigma"])
        # keep the expected length exp(loc + sigma^2 / 2) at or above one token
        new.log_length = np.maximum(new.log_length, -new.verbosity - 0.5 * new.sigma**2)
    if not ratio.size:
        rmin = rmax = 1.0
    return new, UpdateInfo(norms[0], clipped, rmin, rmax)


def policy_update(
    params: PolicyParams,
    batch,
    lr: float,
    clip: ClipBounds,
    exploration_scale: float = 1.0,
    context_cap: Optional[int] = None,
    epochs: int = 1,
) -> PolicyParams:
    """One clipped policy-gradient step.

    ``batch`` is an :class:`UpdateBatch` or a sequence of
    ``(sample_id, rollout, advantage, old_log_prob)`` tuples.
    """
    if not isinstance(batch, UpdateBatch):
        batch = UpdateBatch.from_items(params, batch, context_cap)
    new, _ = update_step(params, batch, lr, clip, exploration_scale, epochs)
    return new


def policy_entropy_proxy(params: PolicyParams, idx: Optional[np.ndarray] = None) -> float:
    """Mean Bernoulli entropy of the correctness heads plus log(sigma)."""
    if idx is None:
        idx = np.arange(len(params.sample_ids))
    p = np.clip(params.success_prob(idx), 1e-12, 1 - 1e-12)
    h = -(p * np.log(p) + (1 - p) * np.log1p(-p))
    return float(np.mean(h) + math.log(params.sigma))
