"""Rollout trace ingestion and training-dynamics analytics."""

from __future__ import annotations

import collections
import csv
import json
import logging
import math
import os
import string
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

log = logging.getLogger(__name__)

STAGES = ("accuracy", "compression")
CSV_HEADER = ("step", "accuracy", "mean_length", "min_length", "max_length", "gated_fraction")


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class TraceRecord:
    sample_id: str
    step: int
    length: int
    correct: int
    text: Optional[str] = None
    run_id: Optional[str] = None
    stage: Optional[str] = None


class TraceLog(list):
    """List of records plus a counter of ignored unknown keys."""

    def __init__(self, records=(), unknown_keys=None):
        super().__init__(records)
        self.unknown_keys = collections.Counter(unknown_keys or {})


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _parse_line(obj, lineno: int) -> TraceRecord:
    if not isinstance(obj, dict):
        raise TraceError(f"line {lineno}: expected a JSON object")
    for name in ("sample_id", "step", "length", "correct"):
        if name not in obj:
            raise TraceError(f"line {lineno}: missing field {name}")
    if not isinstance(obj["sample_id"], str):
        raise TraceError(f"line {lineno}: field sample_id must be a string")
    if not _is_int(obj["step"]) or obj["step"] < 0:
        raise TraceError(f"line {lineno}: field step must be an integer >= 0")
    if not _is_int(obj["length"]) or obj["length"] < 1:
        raise TraceError(f"line {lineno}: field length must be an integer >= 1")
    if not _is_int(obj["correct"]) or obj["correct"] not in (0, 1):
        raise TraceError(f"line {lineno}: field correct must be 0 or 1")
    for name in ("text", "run_id"):
        if obj.get(name) is not None and not isinstance(obj[name], str):
            raise TraceError(f"line {lineno}: field {name} must be a string")
    if obj.get("stage") is not None and obj["stage"] not in STAGES:
        raise TraceError(f"line {lineno}: field stage must be one of {', '.join(STAGES)}")
    return TraceRecord(
        obj["sample_id"], obj["step"], obj["length"], obj["correct"], obj.get("text"), obj.get("run_id"), obj.get("stage")
    )


_KNOWN = {f.name for f in fields(TraceRecord)}


def ingest_jsonl(path: os.PathLike) -> TraceLog:
    """Parse a rollout trace. Blank lines are skipped; anything else must match the schema."""
    records, unknown = [], collections.Counter()
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise TraceError(f"cannot read trace {path}: {exc.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            records.append(_parse_line(obj, lineno))
            for key in obj.keys() - _KNOWN:
                unknown[key] += 1
    if unknown:
        log.warning("ignored unknown keys in %s: %s", path, dict(unknown))
    return TraceLog(records, unknown)


@dataclass(frozen=True)
class StepSummary:
    step: int
    accuracy: float
    mean_length: float
    min_length: int
    max_length: int
    gated_fraction: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.accuracy <= 1.0:
            raise TraceError(f"step {self.step}: accuracy {self.accuracy} outside [0, 1]")
        if not self.min_length <= self.mean_length <= self.max_length:
            raise TraceError(f"step {self.step}: expected min <= mean <= max length")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "StepSummary":
        return cls(
            int(d["step"]),
            float(d["accuracy"]),
            float(d["mean_length"]),
            int(d["min_length"]),
            int(d["max_length"]),
            float(d["gated_fraction"]),
        )


def summarize(records: Iterable[TraceRecord]) -> list[StepSummary]:
    """Per-step aggregates. Duplicate records count every time they appear."""
    by_step: dict = collections.defaultdict(list)
    for r in records:
        by_step[r.step].append(r)
    out = []
    for step in sorted(by_step):
        rs = by_step[step]
        lengths = [r.length for r in rs]
        groups: dict = collections.defaultdict(list)
        for r in rs:
            groups[(r.run_id, r.sample_id)].append(r.correct)
        gated = sum(1 for cs in groups.values() if sum(cs) == len(cs))
        out.append(
            StepSummary(
                step=step,
                accuracy=sum(r.correct for r in rs) / len(rs),
                mean_length=math.fsum(lengths) / len(lengths),
                min_length=min(lengths),
                max_length=max(lengths),
                gated_fraction=gated / len(groups),
            )
        )
    return out


@dataclass(frozen=True)
class RelativeChange:
    delta_length_pct: float
    delta_accuracy_points: float


def relative_change(baseline: StepSummary, current: StepSummary) -> RelativeChange:
    if not baseline.mean_length > 0:
        raise TraceError("baseline mean length must be positive")
    return RelativeChange(
        100.0 * (current.mean_length - baseline.mean_length) / baseline.mean_length,
        100.0 * (current.accuracy - baseline.accuracy),
    )


@dataclass(frozen=True)
class PatternCount:
    count: int
    ratio: float


_PUNCT = string.punctuation + "‘’“”"


def normalize_token(token: str) -> str:
    return token.lower().strip(_PUNCT)


def token_pattern_frequency(texts: Sequence[str], patterns: Sequence[str]) -> dict:
    """Whole-token matches per pattern, and their share of all whitespace tokens."""
    if not patterns:
        raise TraceError("at least one pattern is required")
    wanted = {}
    for p in patterns:
        norm = normalize_token(p)
        if not norm or any(ch.isspace() for ch in norm):
            raise TraceError(f"pattern {p!r} must be a single word")
        wanted[p] = norm
    counts = collections.Counter()
    total = 0
    for text in texts:
        tokens = text.split()
        total += len(tokens)
        counts.update(normalize_token(t) for t in tokens)
    return {p: PatternCount(counts[n], counts[n] / total if total else 0.0) for p, n in wanted.items()}


def pattern_frequency_by_step(records: Iterable[TraceRecord], patterns: Sequence[str]) -> dict:
    """Corpus-wide frequency per step over the records that carry text."""
    texts: dict = collections.defaultdict(list)
    for r in records:
        texts[r.step].append(r.text or "")
    return {step: token_pattern_frequency(texts[step], patterns) for step in sorted(texts)}


# -- reports --


def emit_report(
    summaries: Sequence[StepSummary],
    fmt: str,
    path: os.PathLike,
    extra_columns: Optional[Mapping[int, Mapping[str, float]]] = None,
    title: str = "",
) -> Path:
    path = Path(path)
    if fmt == "csv":
        _write_csv(summaries, path, extra_columns)
    elif fmt == "svg":
        if not summaries:
            raise TraceError("cannot draw an SVG report from zero summaries")
        _write_svg(summaries, path, title)
    else:
        raise TraceError(f"unknown report format {fmt!r}")
    return path


def _write_csv(summaries, path: Path, extra_columns) -> None:
    extra_names: list = []
    if extra_columns:
        extra_names = sorted({k for row in extra_columns.values() for k in row})
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER + tuple(extra_names))
            for s in summaries:
                row = [getattr(s, k) for k in CSV_HEADER]
                more = (extra_columns or {}).get(s.step, {})
                w.writerow(row + [more.get(k, "") for k in extra_names])
    except OSError as exc:
        raise TraceError(f"cannot write {path}: {exc.strerror}") from None


def read_summary_csv(path: os.PathLike) -> list[StepSummary]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ())[: len(CSV_HEADER)] != CSV_HEADER:
            raise TraceError(f"{path}: unexpected header {reader.fieldnames}")
        return [StepSummary.from_dict(row) for row in reader]


def _write_svg(summaries, path: Path, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = [s.step for s in summaries]
    first = summaries[0]
    length = [100.0 * s.mean_length / first.mean_length for s in summaries]
    if first.accuracy > 0:
        acc = [100.0 * s.accuracy / first.accuracy for s in summaries]
        acc_label = "accuracy (% of first step)"
    else:
        acc = [100.0 * s.accuracy for s in summaries]
        acc_label = "accuracy (points)"
    with matplotlib.rc_context({"svg.hashsalt": "gatedcomp", "svg.fonttype": "path"}):
        fig, left = plt.subplots(figsize=(7, 4))
        right = left.twinx()
        left.plot(steps, length, color="tab:blue", label="mean length")
        right.plot(steps, acc, color="tab:red", label="accuracy")
        left.set_xlabel("step")
        left.set_ylabel("mean length (% of first step)", color="tab:blue")
        right.set_ylabel(acc_label, color="tab:red")
        if title:
            left.set_title(title)
        fig.tight_layout()
        try:
            fig.savefig(path, format="svg", metadata={"Date": None})
        except OSError as exc:
            raise TraceError(f"cannot write {path}: {exc.strerror}") from None
        finally:
            plt.close(fig)
