"""Run configuration: a flat YAML key set with CLI overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .curriculum import CurriculumError, EarlyStopRule, StageConfig, StageKind
from .policy import AdvantageMode, ClipBounds, PolicyError, StepScales
from .sampler import MixtureConfig, SamplerError
from .sim import PROFILES, SimConfig, SimError

OUTPUT_ROOT_ENV = "GATEDCOMP_OUTPUT_ROOT"

BASELINES = ("ours", "global_soft_lite", "global_soft_heavy", "hard_truncation")
# global penalty onset per baseline, in tokens
GLOBAL_L_START = {"global_soft_lite": 26000, "global_soft_heavy": 18000}


class ConfigError(ValueError):
    pass


def default_stages() -> list:
    return ["accuracy:60:5", "compression:150:5", "accuracy:60:5"]


@dataclass
class RunConfig:
    # population and rollouts
    seed: int = 0
    population_size: int = 1024
    heldout_size: int = 256
    rollouts_per_sample: int = 8
    context_cap: int = 65536
    exploration_scale: float = 1.0
    eval_exploration_scale: float = 0.6
    eval_rollouts: int = 32
    difficulty_profile: str = "uniform"
    median_length_tokens: float = 12000.0
    length_spread: float = 0.35
    length_difficulty_slope: float = 0.12
    initial_sigma: float = 0.35
    slack_low: float = 0.35
    slack_high: float = 2.5
    coupling: float = 30.0
    softness: float = 0.05
    length_correctness_correlation: float = 0.0
    # batches
    rho: float = 0.1
    batch_size: int = 256
    # optimization
    advantage_mode: str = "drgrpo_mean_baseline"
    clip_low: float = 0.2
    clip_high: float = 0.27
    learning_rate: float = 0.1
    epochs: int = 1
    scale_logit: float = 1.0
    scale_log_length: float = 0.25
    scale_skill: float = 0.05
    scale_verbosity: float = 1.0
    scale_sigma: float = 0.0
    # curriculum
    stages: list = field(default_factory=default_stages)
    early_stop: bool = True
    early_stop_delta: float = 1.0
    early_stop_patience: int = 2
    early_stop_window: int = 3
    # baselines and diagnostics
    baseline: str = "ours"
    global_l_start: Optional[int] = None
    global_l_max: Optional[int] = None
    spike_factor: float = 10.0
    trace_every: int = 10
    # output (not part of the config hash)
    output_dir: Optional[str] = None

    def __post_init__(self) -> None:
        self.validate()

    # -- derived component configs --

    def sim_config(self) -> SimConfig:
        return SimConfig(
            population_size=self.population_size,
            heldout_size=self.heldout_size,
            rollouts_per_sample=self.rollouts_per_sample,
            context_cap=self.context_cap,
            seed=self.seed,
            exploration_scale=self.exploration_scale,
            eval_exploration_scale=self.eval_exploration_scale,
            eval_rollouts=self.eval_rollouts,
            length_center=math.log(self.median_length_tokens),
            length_spread=self.length_spread,
            length_difficulty_slope=self.length_difficulty_slope,
            initial_sigma=self.initial_sigma,
            slack_low=self.slack_low,
            slack_high=self.slack_high,
            coupling=self.coupling,
            softness=self.softness,
            length_correctness_correlation=self.length_correctness_correlation,
        )

    def mixture(self) -> MixtureConfig:
        return MixtureConfig(self.rho, self.batch_size)

    def clip(self) -> ClipBounds:
        return ClipBounds(self.clip_low, self.clip_high)

    def mode(self) -> AdvantageMode:
        return AdvantageMode(self.advantage_mode)

    def step_scales(self) -> StepScales:
        return StepScales(self.scale_logit, self.scale_log_length, self.scale_skill, self.scale_verbosity, self.scale_sigma)

    def stage_schedule(self) -> tuple:
        return tuple(parse_stage(s) for s in self.stages)

    def early_stop_rule(self) -> Optional[EarlyStopRule]:
        if not self.early_stop:
            return None
        return EarlyStopRule(self.early_stop_delta, self.early_stop_patience, self.early_stop_window)

    def global_bounds(self) -> tuple[int, int]:
        start = self.global_l_start if self.global_l_start is not None else GLOBAL_L_START.get(self.baseline, 26000)
        stop = self.global_l_max if self.global_l_max is not None else self.context_cap
        return int(start), int(stop)

    # -- validation and identity --

    def validate(self) -> None:
        if self.baseline not in BASELINES:
            raise ConfigError(f"baseline: must be one of {', '.join(BASELINES)}, got {self.baseline!r}")
        if self.difficulty_profile not in PROFILES:
            raise ConfigError(f"difficulty_profile: must be one of {', '.join(sorted(PROFILES))}")
        if not self.median_length_tokens >= 1:
            raise ConfigError("median_length_tokens: must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate: must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs: must be >= 1")
        if not self.spike_factor > 1:
            raise ConfigError("spike_factor: must be > 1")
        if self.trace_every < 0:
            raise ConfigError("trace_every: must be >= 0")
        if not isinstance(self.stages, list) or not self.stages:
            raise ConfigError("stages: must be a non-empty list like ['accuracy:60:5', 'compression:150:5']")
        checks = [
            ("advantage_mode", self.mode),
            ("population", self.sim_config),
            ("rho/batch_size", self.mixture),
            ("clip_low/clip_high", self.clip),
            ("stages", self.stage_schedule),
            ("early_stop", self.early_stop_rule),
        ]
        for name, build in checks:
            try:
                build()
            except (SimError, SamplerError, PolicyError, CurriculumError, ValueError) as exc:
                raise ConfigError(f"{name}: {exc}") from None
        if self.batch_size > self.population_size:
            raise ConfigError(f"batch_size: {self.batch_size} exceeds population_size {self.population_size}")
        if self.heldout_size < 1:
            raise ConfigError("heldout_size: evaluation needs at least one held-out problem")
        if self.baseline.startswith("global_soft"):
            start, stop = self.global_bounds()
            if start >= stop:
                raise ConfigError(f"global_l_start: {start} must be below global_l_max {stop}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Digest of every field that influences the run's outputs."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def dump(self, path: Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def parse_stage(spec: Any) -> StageConfig:
    """``"compression:150:5"`` or ``{kind, max_steps, eval_every}``."""
    if isinstance(spec, Mapping):
        return StageConfig(StageKind(spec["kind"]), int(spec["max_steps"]), int(spec.get("eval_every", 5)))
    parts = str(spec).split(":")
    if len(parts) not in (2, 3):
        raise CurriculumError(f"bad stage {spec!r}; expected kind:max_steps[:eval_every]")
    try:
        kind = StageKind(parts[0].strip())
    except ValueError:
        raise CurriculumError(f"bad stage kind {parts[0]!r}") from None
    try:
        nums = [int(p) for p in parts[1:]]
    except ValueError:
        raise CurriculumError(f"bad stage {spec!r}; step counts must be integers") from None
    return StageConfig(kind, *nums)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: Any) -> Any:
    default = _FIELDS[name].default
    if name == "stages":
        if isinstance(raw, str):
            return [s.strip() for s in raw.split(",") if s.strip()]
        return list(raw)
    if isinstance(raw, str) and name not in ("advantage_mode", "difficulty_profile", "baseline", "output_dir"):
        raw = yaml.safe_load(raw)
    if raw is None:
        return None
    if isinstance(default, bool):
        if not isinstance(raw, bool):
            raise ConfigError(f"{name}: expected true/false, got {raw!r}")
        return raw
    if isinstance(default, int) or name in ("global_l_start", "global_l_max"):
        if isinstance(raw, bool) or not float(raw).is_integer():
            raise ConfigError(f"{name}: expected an integer, got {raw!r}")
        return int(raw)
    if isinstance(default, float):
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {raw!r}")
        return float(raw)
    return str(raw)


def build_config(values: Mapping[str, Any]) -> RunConfig:
    unknown = sorted(set(values) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    kwargs = {}
    for name, raw in values.items():
        try:
            kwargs[name] = _coerce(name, raw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{name}: {exc}") from None
    return RunConfig(**kwargs)


def load_config(path: Optional[os.PathLike] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    values: dict = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a mapping of keys to values")
        values.update(loaded)
    values.update(overrides or {})
    return build_config(values)


def parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {pair!r} must look like key=value")
        out[key.strip().replace("-", "_")] = value
    return out
