"""Command-line entry point.

Exit codes: 0 success (including early stop), 1 config error, 2 runtime
error, 3 data error.
"""

from __future__ import annotations

import argparse
import collections
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from .checkpoint import CheckpointError
from .config import OUTPUT_ROOT_ENV, ConfigError, load_config, parse_overrides
from .rewards import RewardError, RolloutRecord, shape_group
from .runner import RunError, resume, simulate
from .traces import TraceError, emit_report, ingest_jsonl, pattern_frequency_by_step, relative_change, summarize

log = logging.getLogger("gatedcomp")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_DATA = 0, 1, 2, 3


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def cmd_simulate(args) -> int:
    overrides = parse_overrides(args.set)
    for name in ("seed", "baseline"):
        if getattr(args, name) is not None:
            overrides[name] = str(getattr(args, name))
    cfg = load_config(args.config, overrides)
    if args.run_dir:
        run_dir = Path(args.run_dir)
    else:
        root = Path(cfg.output_dir) if cfg.output_dir else output_root()
        run_dir = root / f"{cfg.baseline}-seed{cfg.seed}-{cfg.hash()[:8]}"
    result = simulate(cfg, run_dir)
    cur = result.curriculum
    last = result.evals[-1]
    print(
        f"run {run_dir}: {len(result.transitions)} stage transitions, loops={cur.loop_index}, "
        f"early_stopped={cur.early_stopped}, final accuracy={100 * last['accuracy']:.2f} "
        f"mean_length={last['mean_length']:.0f}"
    )
    if result.spikes:
        print(f"gradient-norm spikes at steps {result.spikes}")
    return EXIT_OK


def cmd_resume(args) -> int:
    cfg = load_config(args.config) if args.config else None
    result = resume(args.checkpoint, cfg)
    print(f"resumed {result.run_dir}: loops={result.curriculum.loop_index} early_stopped={result.curriculum.early_stopped}")
    return EXIT_OK


def shape_rewards_stream(records) -> list[dict]:
    """One output object per rollout; groups that cannot be shaped yield an error object."""
    steps = {r.step for r in records}
    if len(steps) > 1:
        raise TraceError(f"input mixes steps {sorted(steps)}; shape one step at a time")
    groups = collections.OrderedDict()
    for r in records:
        groups.setdefault(r.sample_id, []).append(r)
    out = []
    for sid, rs in groups.items():
        if len(rs) < 2:
            out.append({"sample_id": sid, "error": f"group has {len(rs)} rollout; at least 2 are required"})
            continue
        rollouts = [RolloutRecord(r.sample_id, r.step, r.length, r.correct) for r in rs]
        state, penalties, shaped = shape_group(rollouts)
        for r, p, s in zip(rollouts, penalties, shaped):
            out.append(
                {
                    "sample_id": sid,
                    "length": r.length,
                    "correct": r.correct,
                    "gate_open": state.gate_open,
                    "penalty": p,
                    "shaped_reward": s,
                }
            )
    return out


def cmd_shape_rewards(args) -> int:
    records = ingest_jsonl(args.input)
    rows = shape_rewards_stream(records)
    text = "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in rows)
    bad = sum(1 for r in rows if "error" in r)
    if bad:
        log.warning("%d group(s) could not be shaped; see error records", bad)
    if args.output in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.output).write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_analyze(args) -> int:
    records = ingest_jsonl(args.trace)
    summaries = summarize(records)
    by_step = {s.step: s for s in summaries}
    if args.baseline_step not in by_step:
        raise TraceError(f"baseline step {args.baseline_step} is not in the trace (steps {min(by_step, default='-')}..{max(by_step, default='-')})")
    out = Path(args.out) if args.out else Path(args.trace).with_suffix("").parent / (Path(args.trace).stem + "_report")
    out.mkdir(parents=True, exist_ok=True)
    extra = None
    if args.patterns:
        patterns = [p.strip() for p in args.patterns.split(",") if p.strip()]
        freq = pattern_frequency_by_step(records, patterns)
        extra = {
            step: {**{f"{p}_count": c.count for p, c in row.items()}, **{f"{p}_ratio": c.ratio for p, c in row.items()}}
            for step, row in freq.items()
        }
    emit_report(summaries, "csv", out / "summary.csv", extra)
    emit_report(summaries, "svg", out / "summary.svg", title=Path(args.trace).name)
    base = by_step[args.baseline_step]
    others = [s for s in summaries if s.step != args.baseline_step]
    if not others:
        log.warning("trace has only step %d; no relative changes to report", args.baseline_step)
    with open(out / "relative_change.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("step", "mean_length", "delta_length_pct", "accuracy", "delta_accuracy_points"))
        for s in others:
            rc = relative_change(base, s)
            w.writerow((s.step, s.mean_length, round(rc.delta_length_pct, 4), s.accuracy, round(rc.delta_accuracy_points, 4)))
    print(f"report written to {out} ({len(summaries)} steps)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gatedcomp", description="Mastery-gated length compression: rewards and simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the training-loop simulator")
    s.add_argument("--config", help="YAML file of flat config keys")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    s.add_argument("--seed", type=int)
    s.add_argument("--baseline", choices=("ours", "global_soft_lite", "global_soft_heavy", "hard_truncation"))
    s.add_argument("--run-dir", help=f"exact run directory (default: ${OUTPUT_ROOT_ENV} or ./runs, plus a run name)")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("resume", help="continue a run from one of its checkpoints")
    r.add_argument("checkpoint")
    r.add_argument("--config", help="config to check against (default: the run's config.yaml)")
    r.set_defaults(func=cmd_resume)

    sr = sub.add_parser("shape-rewards", help="shaped rewards for one step of rollouts (JSONL in, JSONL out)")
    sr.add_argument("input")
    sr.add_argument("-o", "--output", help="output path (default: stdout)")
    sr.set_defaults(func=cmd_shape_rewards)

    a = sub.add_parser("analyze", help="summaries, plots and relative changes for a rollout trace")
    a.add_argument("trace")
    a.add_argument("--baseline-step", type=int, default=0)
    a.add_argument("--patterns", help="comma-separated words to count, e.g. but,however")
    a.add_argument("--out", help="report directory")
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TraceError, CheckpointError, RewardError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (RunError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
