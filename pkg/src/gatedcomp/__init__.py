"""Mastery-gated, sample-level soft compression of reasoning length.

Reward shaping, a GRPO-family update for a synthetic policy, the mixture
sampler, the stage curriculum, trace analytics and a training-loop simulator.
"""

from .rewards import (
    LengthTargets,
    RewardError,
    RolloutRecord,
    SampleState,
    build_sample_state,
    compute_length_targets,
    compute_passrate,
    global_soft_penalty,
    hard_truncate,
    shape_group,
    shaped_reward,
    soft_length_penalty,
)

__version__ = "0.1.0"

__all__ = [
    "LengthTargets",
    "RewardError",
    "RolloutRecord",
    "SampleState",
    "build_sample_state",
    "compute_length_targets",
    "compute_passrate",
    "global_soft_penalty",
    "hard_truncate",
    "shape_group",
    "shaped_reward",
    "soft_length_penalty",
]
