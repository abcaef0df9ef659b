"""Simulation driver: stages, baselines, metrics stream, checkpoints, resume.

Step numbering: ``step`` is the number of updates already applied to the
policy. Training rollouts drawn at step t come from the params after t
updates; the eval logged at step t+1 scores the params after update t.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import rng, sim
from .checkpoint import Checkpoint, CheckpointError, checkpoint_load, checkpoint_save
from .config import RunConfig
from .curriculum import CurriculumState, Decision, EvalPoint, StageKind, stage_step
from .policy import PolicyParams, UpdateBatch, group_advantages_array, log_prob_and_grad, policy_entropy_proxy, update_step
from .rewards import gated_rewards_array, group_targets_array, soft_penalty_array
from .sampler import draw_batch, draw_uniform
from .traces import StepSummary, emit_report

log = logging.getLogger(__name__)

METRICS = "metrics.jsonl"
TRACES = "traces.jsonl"
CKPT_DIR = "checkpoints"
# spike test needs a few reference steps before it means anything
MIN_SPIKE_HISTORY = 5


class RunError(RuntimeError):
    pass


@dataclass
class RunResult:
    run_dir: Path
    params: PolicyParams
    curriculum: CurriculumState
    evals: list = field(default_factory=list)
    transitions: list = field(default_factory=list)
    spikes: list = field(default_factory=list)


def ckpt_path(run_dir: Path, step: int) -> Path:
    return Path(run_dir) / CKPT_DIR / f"ckpt_{step:06d}.bin"


def _dumps(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":")) + "\n"


class Simulation:
    def __init__(self, cfg: RunConfig, run_dir: os.PathLike):
        self.cfg = cfg
        self.run_dir = Path(run_dir)
        self.sim_cfg = cfg.sim_config()
        problems, params = sim.init_population(self.sim_cfg, cfg.difficulty_profile)
        self.train = [p for p in problems if not p.heldout]
        self.heldout = [p for p in problems if p.heldout]
        self.initial_params = params
        self.train_idx = params.indices(p.sample_id for p in self.train)
        self.train_keys = sim.sample_base_keys(cfg.seed, "rollout", [p.sample_id for p in self.train])
        self.eval_key = rng.derive_key(cfg.seed, "eval")
        self.run_id = f"seed{cfg.seed}-{cfg.baseline}"
        self.rule = cfg.early_stop_rule()
        self.result: Optional[RunResult] = None

    # -- one training step --

    def _rewards(self, kind: StageKind, L: np.ndarray, C: np.ndarray, cens: np.ndarray):
        """Rewards plus the (possibly edited) records the update trains on."""
        base = self.cfg.baseline
        if kind is StageKind.ACCURACY:
            return C.astype(np.float64), L, C, cens
        if base == "ours":
            _, _, R = gated_rewards_array(L, C)
            return R, L, C, cens
        if base.startswith("global_soft"):
            start, stop = self.cfg.global_bounds()
            R = C + soft_penalty_array(L, np.full(L.shape, start), np.full(L.shape, stop))
            return R, L, C, cens
        # hard truncation: gated samples are cut at their safe length
        gate = C.sum(axis=1) == C.shape[1]
        l_start, _ = group_targets_array(L)
        cut = gate[:, None] & (L > l_start[:, None])
        L2 = np.where(cut, l_start[:, None], L)
        C2 = np.where(cut, 0, C)
        return C2.astype(np.float64), L2, C2, cens | cut

    def train_step(self, params: PolicyParams, step: int, kind: StageKind):
        cfg = self.cfg
        n = cfg.rollouts_per_sample
        block = sim.sample_block(
            params, self.train_idx, sim.step_keys(self.train_keys, step), n, cfg.context_cap, cfg.exploration_scale
        )
        gate = block.correct.sum(axis=1) == n
        rows = np.arange(len(self.train_idx))
        stream = rng.Stream.derive(cfg.seed, "batch", step)
        mixed = kind is StageKind.COMPRESSION and cfg.baseline in ("ours", "hard_truncation")
        if mixed:
            batch = draw_batch(list(rows[gate]), list(rows[~gate]), cfg.mixture(), stream)
        else:
            batch = draw_uniform(list(rows), cfg.batch_size, stream)
        sel = np.array(batch.sample_ids, dtype=np.int64)
        L, C, cens = block.length[sel], block.correct[sel], block.censored[sel]
        R, L2, C2, cens2 = self._rewards(kind, L, C, cens)
        A = group_advantages_array(R, cfg.mode())
        G = len(sel)
        idx = np.repeat(self.train_idx[sel], n)
        # behaviour log-probs belong to what was generated, before any edit
        old = log_prob_and_grad(params, idx, L.ravel(), C.ravel(), cens.ravel(), cfg.exploration_scale).log_prob
        ub = UpdateBatch(idx, np.repeat(np.arange(G), n), L2.ravel(), C2.ravel(), A.ravel(), old, cens2.ravel())
        try:
            new, info = update_step(params, ub, cfg.learning_rate, cfg.clip(), cfg.exploration_scale, cfg.epochs, cfg.step_scales())
        except FloatingPointError as exc:
            raise RunError(f"step {step}: {exc}") from None
        summary = StepSummary(
            step=step,
            accuracy=float(block.correct.mean()),
            mean_length=float(block.length.mean()),
            min_length=int(block.length.min()),
            max_length=int(block.length.max()),
            gated_fraction=float(gate.mean()),
        )
        traced = None
        if cfg.trace_every and step % cfg.trace_every == 0:
            traced = (self.train_idx[sel], L, C)
        return new, summary, batch.metadata(), info, traced

    def evaluate(self, params: PolicyParams) -> sim.EvalMetrics:
        return sim.evaluate(
            params, self.heldout, self.cfg.eval_rollouts, self.eval_key, self.cfg.eval_exploration_scale, self.cfg.context_cap
        )

    # -- the loop --

    def _open_streams(self, metrics_offset: int, trace_offset: int, fresh: bool):
        self.run_dir.mkdir(parents=True, exist_ok=True)
        (self.run_dir / CKPT_DIR).mkdir(exist_ok=True)
        paths = (self.run_dir / METRICS, self.run_dir / TRACES)
        handles = []
        for path, offset in zip(paths, (metrics_offset, trace_offset)):
            if fresh:
                handles.append(open(path, "wb"))
                continue
            if not path.exists() or path.stat().st_size < offset:
                raise RunError(f"{path} is shorter than the checkpoint expects; cannot resume")
            fh = open(path, "r+b")
            fh.truncate(offset)
            fh.seek(offset)
            handles.append(fh)
        return handles

    def _write(self, fh, obj: dict) -> None:
        fh.write(_dumps(obj).encode("utf-8"))

    def _checkpoint(self, params, cur, step, metrics, traces, grad_norms) -> None:
        metrics.flush()
        traces.flush()
        extra = {"metrics_offset": metrics.tell(), "trace_offset": traces.tell(), "grad_norms": grad_norms}
        checkpoint_save(Checkpoint(params, cur, step, self.cfg.hash(), extra), ckpt_path(self.run_dir, step))

    def run(self, resume_from: Optional[Checkpoint] = None) -> RunResult:
        cfg = self.cfg
        if resume_from is None:
            params = self.initial_params.copy()
            cur = CurriculumState(cfg.stage_schedule())
            step, grad_norms = 0, []
            metrics, traces = self._open_streams(0, 0, fresh=True)
            cfg.dump(self.run_dir / "config.yaml")
        else:
            if resume_from.config_hash != cfg.hash():
                raise CheckpointError("config hash mismatch; refusing to resume")
            params, cur, step = resume_from.params.copy(), resume_from.curriculum, resume_from.rng_cursor
            grad_norms = list(resume_from.extra["grad_norms"])
            metrics, traces = self._open_streams(
                resume_from.extra["metrics_offset"], resume_from.extra["trace_offset"], fresh=False
            )
        try:
            if resume_from is None:
                ev = self.evaluate(params)
                if not cur.finished:
                    cur.record_eval(EvalPoint(0, 100.0 * ev.accuracy, ev.mean_length))
                self._log_eval(metrics, 0, cur, ev)
                self._checkpoint(params, cur, 0, metrics, traces, grad_norms)
            while not cur.finished:
                params, step = self._advance(params, cur, step, metrics, traces, grad_norms)
            self._write(metrics, {"event": "run_end", "step": step, "loop": cur.loop_index, "early_stopped": cur.early_stopped})
        finally:
            metrics.close()
            traces.close()
        result = self._collect(params, cur)
        self._report(result)
        return result

    def _advance(self, params, cur, step, metrics, traces, grad_norms):
        stage = cur.current_stage
        new, summary, meta, info, traced = self.train_step(params, step, stage.kind)
        ref = float(np.median(grad_norms)) if len(grad_norms) >= MIN_SPIKE_HISTORY else None
        spike = ref is not None and ref > 0 and info.grad_norm > self.cfg.spike_factor * ref
        grad_norms.append(info.grad_norm)
        rec = {"event": "step", "stage": stage.kind.value, "loop": cur.loop_index}
        rec.update(summary.to_dict())
        rec.update(
            batch=meta,
            grad_norm=info.grad_norm,
            grad_norm_ref=ref,
            grad_spike=spike,
            clip_fraction=info.clip_fraction,
            entropy_proxy=policy_entropy_proxy(new, self.train_idx),
            sigma=new.sigma,
        )
        self._write(metrics, rec)
        if traced is not None:
            self._trace(traces, step, stage.kind, new.sample_ids, *traced)
        params, step = new, step + 1
        done_in_stage = cur.step_in_stage + 1
        is_eval = done_in_stage % stage.eval_every == 0 or done_in_stage >= stage.max_steps
        ev = self.evaluate(params) if is_eval else None
        point = EvalPoint(step, 100.0 * ev.accuracy, ev.mean_length) if ev else None
        rule = self.rule if stage.kind is StageKind.COMPRESSION else None
        decision = stage_step(cur, point, rule)
        if ev is not None:
            self._log_eval(metrics, step, cur, ev)
        if decision.kind is not Decision.CONTINUE:
            seed_point = point
            if decision.kind is Decision.STOP_RESTORE:
                params = checkpoint_load(ckpt_path(self.run_dir, decision.restore_step), self.cfg.hash()).params
                best = next(h for h in cur.eval_history if h.step == decision.restore_step)
                seed_point = EvalPoint(step, best.accuracy, best.mean_length)
                self._write(metrics, {"event": "restore", "step": step, "restored_step": decision.restore_step})
            before = stage.kind.value
            cur.advance()
            after = "done" if cur.finished else cur.current_stage.kind.value
            if not cur.finished:
                cur.record_eval(seed_point)
            self._write(
                metrics,
                {"event": "stage_transition", "step": step, "from": before, "to": after, "reason": decision.reason, "loop": cur.loop_index},
            )
        if is_eval:
            self._checkpoint(params, cur, step, metrics, traces, grad_norms)
        return params, step

    def _log_eval(self, fh, step: int, cur: CurriculumState, ev: sim.EvalMetrics) -> None:
        self._write(
            fh,
            {
                "event": "eval",
                "step": step,
                "stage": cur.current_stage.kind.value,
                "loop": cur.loop_index,
                "accuracy": ev.accuracy,
                "mean_length": ev.mean_length,
                "min_length": ev.min_length,
                "max_length": ev.max_length,
            },
        )

    def _trace(self, fh, step, kind, sample_ids, idx, L, C) -> None:
        lines = []
        for g, i in enumerate(idx):
            sid = sample_ids[i]
            for l, c in zip(L[g], C[g]):
                lines.append(
                    _dumps({"sample_id": sid, "step": step, "length": int(l), "correct": int(c), "run_id": self.run_id, "stage": kind.value})
                )
        fh.write("".join(lines).encode("utf-8"))

    def _collect(self, params, cur) -> RunResult:
        result = RunResult(self.run_dir, params, cur)
        steps = []
        with open(self.run_dir / METRICS, encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                kind = rec["event"]
                if kind == "eval":
                    result.evals.append(rec)
                elif kind == "stage_transition":
                    result.transitions.append(rec)
                elif kind == "step":
                    steps.append(rec)
                    if rec["grad_spike"]:
                        result.spikes.append(rec["step"])
        self._steps = steps
        return result

    def _report(self, result: RunResult) -> None:
        summaries = [StepSummary.from_dict(r) for r in self._steps]
        emit_report(summaries, "csv", self.run_dir / "summary.csv")
        if summaries:
            emit_report(summaries, "svg", self.run_dir / "summary.svg")
        report = {
            "run_id": self.run_id,
            "config_hash": self.cfg.hash(),
            "final_step": self._steps[-1]["step"] + 1 if self._steps else 0,
            "loops": result.curriculum.loop_index,
            "early_stopped": result.curriculum.early_stopped,
            "transitions": result.transitions,
            "evals": [{k: e[k] for k in ("step", "stage", "accuracy", "mean_length")} for e in result.evals],
            "grad_spikes": result.spikes,
        }
        (self.run_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")


def simulate(cfg: RunConfig, run_dir: os.PathLike) -> RunResult:
    return Simulation(cfg, run_dir).run()


def resume(checkpoint: os.PathLike, cfg: Optional[RunConfig] = None) -> RunResult:
    """Continue the run that wrote ``checkpoint``; its directory is reused."""
    checkpoint = Path(checkpoint)
    run_dir = checkpoint.resolve().parent.parent
    if cfg is None:
        from .config import load_config

        cfg = load_config(run_dir / "config.yaml")
    ckpt = checkpoint_load(checkpoint, cfg.hash())
    return Simulation(cfg, run_dir).run(resume_from=ckpt)
