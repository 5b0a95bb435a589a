"""Segmented replay of a trace: per-segment accuracy tables, top-n sweep, perfect-weight poll."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .ensemble import accuracy, poll_matrix, rank_order
from .errors import InvalidConfig, MissingLabel, TraceTooShort
from .featurization import memory_to_bin
from .learners import METHODS
from .pipeline import (
    ModelSet,
    PipelineConfig,
    PipelineState,
    assemble_window,
    build_model_set,
    replay,
    split_window,
)
from .workload import JobRecord, event_stream

TABLE_COLUMNS = ("segment", "mode") + METHODS


@dataclass(frozen=True)
class EvalConfig:
    segments: int = 5
    segment_size: int = 5000
    warmup: int = 10000
    top_n_range: tuple[int, ...] = tuple(range(1, len(METHODS) + 1))
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    strict_per_job: bool = False

    def __post_init__(self):
        if self.segments < 0 or self.segment_size <= 0 or self.warmup < 0:
            raise InvalidConfig("segments, segment_size and warmup must be non-negative")
        if any(not 1 <= n <= len(METHODS) for n in self.top_n_range):
            raise InvalidConfig(f"top-n values must lie in 1..{len(METHODS)}")

    @property
    def needed(self) -> int:
        return self.warmup + self.segments * self.segment_size

    def to_dict(self) -> dict:
        return {"segments": self.segments, "segment_size": self.segment_size, "warmup": self.warmup,
                "top_n_range": list(self.top_n_range), "strict_per_job": self.strict_per_job,
                "pipeline": self.pipeline.to_dict()}


@dataclass
class Training:
    """One model set as seen by a segment: its ranking and the jobs it learned from."""

    as_of: int
    order: np.ndarray  # method indices, best first
    weights: np.ndarray  # validation accuracies in rank order
    window_job_ids: tuple[str, ...]


@dataclass
class SegmentArtifacts:
    index: int
    as_of: int
    job_ids: list[str]
    labels: np.ndarray
    preds: np.ndarray  # (methods, jobs) in METHODS order
    mode_pred: np.ndarray
    group: np.ndarray  # per job: index into ``trainings``, -1 for the fallback tier
    trainings: list[Training]
    validation: dict[str, float]
    n_train: int
    n_valid: int

    def poll(self, top_n: int) -> np.ndarray:
        out = self.preds[0].copy()  # fallback rows carry one bin in every method row
        for g, tr in enumerate(self.trainings):
            idx = np.flatnonzero(self.group == g)
            if len(idx):
                P = self.preds[tr.order[:top_n]][:, idx]
                out[idx] = poll_matrix(P, tr.weights[:top_n])
        return out

    def test_accuracy(self) -> dict[str, float]:
        acc = {"mode": accuracy(self.mode_pred, self.labels)}
        for k, m in enumerate(METHODS):
            acc[m] = accuracy(self.preds[k], self.labels)
        return acc

    def poll_perfect(self, top_n: int) -> np.ndarray:
        """Poll with weights (and ranking) taken from each method's test accuracy."""
        acc = self.test_accuracy()
        accs = [acc[m] for m in METHODS]
        order = np.array(rank_order(METHODS, accs))[:top_n]
        return poll_matrix(self.preds[order], np.asarray(accs)[order])


@dataclass
class EvaluationReport:
    config: dict
    segments: list[dict]
    retrains: list[int] = field(default_factory=list)
    artifacts: list[SegmentArtifacts] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"config": self.config, "methods": list(METHODS), "segments": self.segments,
                "retrains": self.retrains}


def _labels(jobs: Sequence[JobRecord], cfg: PipelineConfig) -> np.ndarray:
    return np.array([memory_to_bin(j.max_mem_mib, cfg.bin_size_mib, cfg.max_bin) for j in jobs],
                    dtype=np.int64)


def _training(ms: ModelSet) -> Training:
    order = np.array([METHODS.index(e.method) for e in ms.ranked], dtype=np.intp)
    return Training(ms.created_at, order, ms.ranked.weights, ms.window_job_ids)


def _validation_row(ms: ModelSet, valid_labels) -> dict[str, float]:
    row = {"mode": accuracy(np.full(len(valid_labels), ms.mode_bin), valid_labels)}
    row.update({e.method: e.accuracy for e in ms.ranked})
    return row


def _check_trace(trace: Sequence[JobRecord], config: EvalConfig) -> list[JobRecord]:
    if len(trace) < config.needed:
        raise TraceTooShort(config.needed, len(trace))
    for j in trace:
        if not j.finished:
            raise MissingLabel(j.job_id)
    return sorted(trace, key=lambda j: (j.submit_time, j.job_id))


def run_segmented_evaluation(
    trace: Sequence[JobRecord],
    config: EvalConfig | None = None,
    *,
    trainer=None,
    progress: Callable[[str], None] | None = None,
) -> EvaluationReport:
    config = config or EvalConfig()
    jobs = _check_trace(trace, config)
    if config.strict_per_job:
        artifacts, retrains = _strict_artifacts(jobs, config, trainer, progress)
    else:
        artifacts, retrains = _segment_artifacts(jobs, config, trainer, progress)
    return assemble_report(artifacts, config, retrains)


def _segment_bounds(config: EvalConfig, i: int) -> tuple[int, int]:
    start = config.warmup + i * config.segment_size
    return start, start + config.segment_size


def _segment_artifacts(jobs, config: EvalConfig, trainer, progress):
    cfg = config.pipeline
    state = PipelineState(cfg)
    state.extend_finished(sorted(jobs, key=lambda j: (j.finish_time, j.job_id)))
    artifacts = []
    for i in range(config.segments):
        lo, hi = _segment_bounds(config, i)
        seg = jobs[lo:hi]
        as_of = seg[0].submit_time
        window = assemble_window(state, as_of)
        ms = build_model_set(window, cfg, as_of=as_of, consumed=len(window), trainer=trainer,
                             allow_short=True)
        _, valid_jobs = split_window(window, cfg, allow_short=True)
        preds = ms.method_predictions(seg)
        artifacts.append(SegmentArtifacts(
            index=i, as_of=as_of, job_ids=[j.job_id for j in seg], labels=_labels(seg, cfg),
            preds=np.stack([preds[m] for m in METHODS]),
            mode_pred=np.full(len(seg), ms.mode_bin, dtype=np.int64),
            group=np.zeros(len(seg), dtype=np.intp), trainings=[_training(ms)],
            validation=_validation_row(ms, _labels(valid_jobs, cfg)),
            n_train=len(ms.train_ids), n_valid=len(ms.valid_ids),
        ))
        if progress:
            progress(f"segment {i}: window {len(window)} jobs, as_of {as_of}")
    return artifacts, []


def _strict_artifacts(jobs, config: EvalConfig, trainer, progress):
    """Per-job availability: replay every event, retraining on the pipeline cadence."""
    cfg = config.pipeline
    seg_of = {}
    for i in range(config.segments):
        lo, hi = _segment_bounds(config, i)
        for j in jobs[lo:hi]:
            seg_of[j.job_id] = i
    model_sets: list[ModelSet] = []
    valid_rows: list[dict] = []
    window_jobs = {j.job_id: j for j in jobs}
    answers: dict[str, tuple[int, np.ndarray, int]] = {}
    state = PipelineState(cfg, trainer)

    def on_batch(ms, batch):
        batch = [j for j in batch if j.job_id in seg_of]
        if not batch:
            return
        if ms is None:
            b = state.fallback().bin
            for j in batch:
                answers[j.job_id] = (-1, np.full(len(METHODS), b, dtype=np.int64), b)
            return
        if not model_sets or model_sets[-1] is not ms:
            model_sets.append(ms)
            valid = [window_jobs[k] for k in ms.valid_ids]
            valid_rows.append(_validation_row(ms, _labels(valid, cfg)))
            if progress:
                progress(f"model set {len(model_sets) - 1}: trained at {ms.created_at}")
        g = len(model_sets) - 1
        preds = ms.method_predictions(batch)
        for k, j in enumerate(batch):
            answers[j.job_id] = (g, np.array([preds[m][k] for m in METHODS]), ms.mode_bin)

    replay(state, event_stream(jobs), on_batch)

    artifacts = []
    for i in range(config.segments):
        lo, hi = _segment_bounds(config, i)
        seg = jobs[lo:hi]
        groups = np.array([answers[j.job_id][0] for j in seg], dtype=np.intp)
        used = sorted(set(groups[groups >= 0].tolist()))
        local = {g: n for n, g in enumerate(used)}
        first = model_sets[used[0]] if used else None
        artifacts.append(SegmentArtifacts(
            index=i, as_of=seg[0].submit_time, job_ids=[j.job_id for j in seg],
            labels=_labels(seg, cfg),
            preds=np.stack([answers[j.job_id][1] for j in seg], axis=1),
            mode_pred=np.array([answers[j.job_id][2] for j in seg], dtype=np.int64),
            group=np.array([local.get(g, -1) for g in groups], dtype=np.intp),
            trainings=[_training(model_sets[g]) for g in used],
            validation=valid_rows[used[0]] if used else {k: 0.0 for k in TABLE_COLUMNS[1:]},
            n_train=len(first.train_ids) if first else 0,
            n_valid=len(first.valid_ids) if first else 0,
        ))
    return artifacts, list(state.retrain_log)


def top_n_sweep(artifacts: Sequence[SegmentArtifacts], n_range: Sequence[int]) -> list[dict[int, float]]:
    """Re-poll cached test predictions with the top n models for every n; no retraining."""
    return [{n: accuracy(a.poll(n), a.labels) for n in n_range} for a in artifacts]


def perfect_weight_comparison(artifacts: Sequence[SegmentArtifacts], top_n: int) -> list[tuple[float, float]]:
    return [(accuracy(a.poll(top_n), a.labels), accuracy(a.poll_perfect(top_n), a.labels))
            for a in artifacts]


def assemble_report(artifacts: Sequence[SegmentArtifacts], config: EvalConfig, retrains=()) -> EvaluationReport:
    top_n = config.pipeline.top_n
    sweep = top_n_sweep(artifacts, config.top_n_range)
    perfect = perfect_weight_comparison(artifacts, top_n)
    segments = []
    for a, topn, (pv, pp) in zip(artifacts, sweep, perfect):
        segments.append({
            "segment": a.index,
            "as_of": int(a.as_of),
            "first_job": a.job_ids[0],
            "n_test": len(a.job_ids),
            "n_train": a.n_train,
            "n_valid": a.n_valid,
            "validation": {k: float(a.validation[k]) for k in TABLE_COLUMNS[1:]},
            "test": a.test_accuracy(),
            "poll_validation": pv,
            "poll_perfect": pp,
            "topn": {str(n): v for n, v in topn.items()},
            "trainings": [{"as_of": int(t.as_of), "ranking": [METHODS[k] for k in t.order],
                           "weights": [float(w) for w in t.weights]} for t in a.trainings],
        })
    return EvaluationReport(config.to_dict(), segments, [int(r) for r in retrains], list(artifacts))


def audit_temporal_leakage(trace: Sequence[JobRecord], artifacts: Sequence[SegmentArtifacts]) -> list[tuple[int, str]]:
    """(segment, job_id) pairs whose finish_time is not before the training instant."""
    finish = {j.job_id: j.finish_time for j in trace}
    bad = []
    for a in artifacts:
        for t in a.trainings:
            for jid in t.window_job_ids:
                ft = finish.get(jid)
                if ft is None or ft >= t.as_of:
                    bad.append((a.index, jid))
    return bad


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _topn_label(n: int) -> str:
    return "all" if n == len(METHODS) else f"top{n}"


def emit_report(report: EvaluationReport, out_dir) -> list[Path]:
    """Write the CSV tables, the JSON report and the per-job prediction log."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    segs = report.segments
    n_range = [int(n) for n in report.config.get("top_n_range", range(1, len(METHODS) + 1))]
    texts = {
        "validation.csv": _csv_text(TABLE_COLUMNS, [
            [s["segment"]] + [_fmt(s["validation"][k]) for k in TABLE_COLUMNS[1:]] for s in segs]),
        "test.csv": _csv_text(TABLE_COLUMNS, [
            [s["segment"]] + [_fmt(s["test"][k]) for k in TABLE_COLUMNS[1:]] for s in segs]),
        "topn.csv": _csv_text(["segment"] + [_topn_label(n) for n in n_range], [
            [s["segment"]] + [_fmt(s["topn"][str(n)]) for n in n_range] for s in segs]),
        "poll.csv": _csv_text(["segment", "mode", "poll_validation", "poll_perfect"], [
            [s["segment"], _fmt(s["test"]["mode"]), _fmt(s["poll_validation"]),
             _fmt(s["poll_perfect"])] for s in segs]),
        "report.json": json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
    }
    top_n = int(report.config.get("pipeline", {}).get("top_n", 4))
    log_rows = []
    for a in report.artifacts:
        pv, pp = a.poll(top_n), a.poll_perfect(top_n)
        for k, jid in enumerate(a.job_ids):
            log_rows.append([a.index, jid, int(a.labels[k]), int(a.mode_pred[k])]
                            + [int(a.preds[m, k]) for m in range(len(METHODS))]
                            + [int(pv[k]), int(pp[k])])
    texts["predictions.csv"] = _csv_text(
        ["segment", "job_id", "actual", "mode", *METHODS, "poll_validation", "poll_perfect"], log_rows)
    paths = []
    for name, text in texts.items():
        p = out / name
        p.write_text(text, newline="\n")
        paths.append(p)
    return paths
