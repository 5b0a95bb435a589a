"""Sliding-window training lifecycle, model-set persistence and the prediction entry point."""

from __future__ import annotations

import bisect
import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import learners, store
from .ensemble import (
    PollConfig,
    RankedEntry,
    RankedModels,
    accuracy,
    mode_baseline,
    poll_breakdown,
    rank_models,
)
from .errors import InvalidConfig, MissingLabel, ShortWindow, StoreCorrupt
from .featurization import (
    EncoderSnapshot,
    FeatureSelection,
    bin_to_request_mib,
    encode_dataset,
    encode_jobs,
    fit_encoder,
    memory_to_bin,
)
from .learners import METHODS, LearnerSpec, TrainedModel
from .workload import EventKind, JobEvent, JobRecord

Trainer = Callable[..., TrainedModel]


@dataclass(frozen=True)
class PipelineConfig:
    window_size: int = 10000
    train_size: int = 9000
    valid_size: int = 1000
    retrain_every: int = 5000
    bin_size_mib: int = 512
    max_bin: int = 256
    top_n: int = 4
    seed: int = 0
    grid_profile: str = "full"
    enable_lbfgs: bool = False
    features: FeatureSelection = field(default_factory=FeatureSelection)
    default_bin: int = 1
    cardinality_cap: int = 1024

    def __post_init__(self):
        for name in ("window_size", "train_size", "valid_size", "retrain_every", "bin_size_mib",
                     "max_bin", "top_n", "cardinality_cap"):
            if int(getattr(self, name)) <= 0:
                raise InvalidConfig(f"{name} must be positive")
        if self.train_size + self.valid_size != self.window_size:
            raise InvalidConfig("train_size + valid_size must equal window_size")
        if self.top_n > len(METHODS):
            raise InvalidConfig(f"top_n must be at most {len(METHODS)}")
        if self.grid_profile not in ("full", "fast"):
            raise InvalidConfig(f"unknown grid profile {self.grid_profile!r}")
        if not 0 <= self.default_bin <= self.max_bin:
            raise InvalidConfig("default_bin outside the bin range")

    def to_dict(self) -> dict:
        return {
            "window_size": self.window_size, "train_size": self.train_size,
            "valid_size": self.valid_size, "retrain_every": self.retrain_every,
            "bin_size_mib": self.bin_size_mib, "max_bin": self.max_bin, "top_n": self.top_n,
            "seed": self.seed, "grid_profile": self.grid_profile,
            "enable_lbfgs": self.enable_lbfgs, "features": self.features.to_dict(),
            "default_bin": self.default_bin, "cardinality_cap": self.cardinality_cap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "features" in kwargs:
            kwargs["features"] = FeatureSelection.from_dict(kwargs["features"])
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise InvalidConfig(str(e)) from e

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def load_config(path) -> PipelineConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except ValueError as e:
        raise InvalidConfig(f"{path}: {e}") from e
    if not isinstance(data, dict):
        raise InvalidConfig(f"{path}: expected an object")
    return PipelineConfig.from_dict(data)


def method_seed(seed: int, method: str) -> int:
    """Per-method training seed derived from the pipeline seed."""
    rng = np.random.default_rng([int(seed) % 2**64, METHODS.index(method)])
    return int(rng.integers(2**63))


def default_trainer(spec: LearnerSpec, train_set, seed: int, *, bin_size_mib: int, max_bin: int) -> TrainedModel:
    return learners.train(spec, train_set, seed, bin_size_mib=bin_size_mib, max_bin=max_bin)


@dataclass(frozen=True)
class Prediction:
    bin: int
    request_mib: float
    tier: str  # model | mode | default
    voters: tuple[dict, ...] = ()

    def line(self) -> str:
        return f"predicted_bin={self.bin} predicted_mem_mib={int(self.request_mib)} tier={self.tier}"


@dataclass(frozen=True)
class ModelSet:
    encoder: EncoderSnapshot
    ranked: RankedModels
    mode_bin: int
    created_at: int
    consumed: int
    top_n: int = 4
    schema_version: int = store.SCHEMA_VERSION
    train_ids: tuple[str, ...] = ()
    valid_ids: tuple[str, ...] = ()
    config_digest: str = ""

    @property
    def window_job_ids(self) -> tuple[str, ...]:
        """Introspection hook: every job id used for training or validation."""
        return self.train_ids + self.valid_ids

    def predict(self, job: JobRecord) -> Prediction:
        rows = encode_jobs([job], self.encoder)
        winner, ballots = poll_breakdown(self.ranked, PollConfig(self.top_n), rows)
        return Prediction(winner, bin_to_request_mib(winner, self.encoder.bin_size_mib), "model",
                          tuple(ballots))

    def method_predictions(self, jobs: Sequence[JobRecord]) -> dict[str, np.ndarray]:
        rows = encode_jobs(jobs, self.encoder)
        return {e.method: e.model.predict_many(rows) for e in self.ranked}


def split_window(window: Sequence[JobRecord], config: PipelineConfig, *, allow_short: bool = False):
    """Temporal split: oldest ``train_size`` jobs train, newest ``valid_size`` validate.

    With ``allow_short`` a window below ``window_size`` still yields a split: the
    newest ``valid_size`` jobs validate and everything older trains.
    """
    n = len(window)
    if n < config.window_size and not (allow_short and n > config.valid_size):
        raise ShortWindow(n, config.window_size)
    window = list(window)[-config.window_size:]
    cut = len(window) - config.valid_size
    return window[:cut], window[cut:]


def build_model_set(
    window: Sequence[JobRecord],
    config: PipelineConfig,
    *,
    as_of: int,
    consumed: int = 0,
    trainer: Trainer | None = None,
    allow_short: bool = False,
) -> ModelSet:
    """Fit the encoder on the training split, train all methods, rank them on validation."""
    trainer = trainer or default_trainer
    train_jobs, valid_jobs = split_window(window, config, allow_short=allow_short)
    encoder = fit_encoder(train_jobs, config.features, bin_size_mib=config.bin_size_mib,
                          max_bin=config.max_bin, cardinality_cap=config.cardinality_cap)
    train_set = encode_dataset(train_jobs, encoder)
    valid_set = encode_dataset(valid_jobs, encoder)
    valid_rows = encode_jobs(valid_jobs, encoder)
    trained = []
    for method in METHODS:
        spec = learners.default_spec(method, config.grid_profile, config.enable_lbfgs)
        model = trainer(spec, train_set, method_seed(config.seed, method),
                        bin_size_mib=config.bin_size_mib, max_bin=config.max_bin)
        trained.append((method, model, model.predict_many(valid_rows)))
    ranked = rank_models(trained, valid_set.y)
    return ModelSet(
        encoder=encoder, ranked=ranked, mode_bin=mode_baseline(train_set.y),
        created_at=int(as_of), consumed=int(consumed), top_n=config.top_n,
        train_ids=tuple(j.job_id for j in train_jobs),
        valid_ids=tuple(j.job_id for j in valid_jobs), config_digest=config.digest(),
    )


class PipelineState:
    """Finished-job buffer, retrain counter and the current model set.

    ``model_set`` is replaced by a single reference assignment, so readers always
    see one complete set; at most one retrain runs at a time.
    """

    def __init__(self, config: PipelineConfig | None = None, trainer: Trainer | None = None):
        self.config = config or PipelineConfig()
        self.trainer = trainer
        self.buffer: list[JobRecord] = []
        self._keys: list[tuple[int, str]] = []
        self.counter = 0
        self.finished_total = 0
        self.model_set: ModelSet | None = None
        self.retrain_log: list[int] = []
        self._label_counts = np.zeros(self.config.max_bin + 1, dtype=np.int64)
        self._ingest_lock = threading.Lock()
        self._train_lock = threading.Lock()

    def observe_finished(self, job: JobRecord) -> None:
        if not job.finished:
            raise MissingLabel(job.job_id)
        key = (job.finish_time, job.job_id)
        with self._ingest_lock:
            pos = bisect.bisect_right(self._keys, key)
            self._keys.insert(pos, key)
            self.buffer.insert(pos, job)
            self.counter += 1
            self.finished_total += 1
            self._label_counts[memory_to_bin(job.max_mem_mib, self.config.bin_size_mib,
                                             self.config.max_bin)] += 1

    def extend_finished(self, jobs: Iterable[JobRecord]) -> None:
        for job in jobs:
            self.observe_finished(job)

    def fallback(self) -> Prediction:
        if self.finished_total > 0:
            b = int(np.argmax(self._label_counts))
            return Prediction(b, bin_to_request_mib(b, self.config.bin_size_mib), "mode")
        b = self.config.default_bin
        return Prediction(b, bin_to_request_mib(b, self.config.bin_size_mib), "default")


def assemble_window(state: PipelineState, as_of: int) -> list[JobRecord]:
    """The newest ``window_size`` buffered jobs with finish_time < as_of, oldest first."""
    stop = bisect.bisect_left(state._keys, (int(as_of), ""))
    return state.buffer[max(0, stop - state.config.window_size):stop]


def retrain_if_due(state: PipelineState, as_of: int) -> ModelSet | None:
    """Retrain when enough jobs finished since the last train; None means unchanged."""
    cfg = state.config
    if state.model_set is not None and state.counter < cfg.retrain_every:
        return None
    if not state._train_lock.acquire(blocking=False):
        return None
    try:
        window = assemble_window(state, as_of)
        if len(window) < cfg.window_size:
            return None
        consumed = state.finished_total
        new = build_model_set(window, cfg, as_of=as_of, consumed=consumed, trainer=state.trainer)
        with state._ingest_lock:
            state.counter = state.finished_total - consumed
            state.model_set = new
            state.retrain_log.append(consumed)
        return new
    finally:
        state._train_lock.release()


def predict_job(state: PipelineState, job: JobRecord) -> Prediction:
    """Always answers: the poll when a model set exists, else the mode, else the default bin."""
    model_set = state.model_set
    if model_set is not None:
        return model_set.predict(job)
    return state.fallback()


def replay(
    state: PipelineState,
    events: Sequence[JobEvent],
    on_batch: Callable[[ModelSet | None, list[JobRecord]], None] | None = None,
) -> PipelineState:
    """Feed a time-ordered event stream through ``state``.

    Each finished job may trigger a retrain at ``finish_time + 1``. Submitted jobs
    are handed to ``on_batch`` in groups that share one model set (answers are
    frozen between retrains). The replay stops after the last submission.
    """
    last_submit = max((i for i, e in enumerate(events) if e.kind == EventKind.SUBMITTED), default=-1)
    pending: list[JobRecord] = []

    def flush():
        if pending and on_batch is not None:
            on_batch(state.model_set, list(pending))
        pending.clear()

    for ev in events[:last_submit + 1]:
        if ev.kind == EventKind.FINISHED:
            # pending jobs are answered before the state can change under them
            if state.model_set is None or state.counter + 1 >= state.config.retrain_every:
                flush()
            state.observe_finished(ev.job)
            if state.model_set is None or state.counter >= state.config.retrain_every:
                retrain_if_due(state, ev.job.finish_time + 1)
        else:
            pending.append(ev.job)
    flush()
    return state


# -- persistence ----------------------------------------------------------------

def _model_payload(entry: RankedEntry) -> dict:
    m: TrainedModel = entry.model
    return {
        "method": m.method,
        "spec": m.spec.to_dict(),
        "classes": m.classes,
        "seed": m.seed,
        "width": m.width,
        "bin_size_mib": m.bin_size_mib,
        "max_bin": m.max_bin,
        "constant": m.constant,
        "state": m.estimator.get_state(),
    }


def _model_from_payload(p: dict) -> TrainedModel:
    spec = LearnerSpec(p["spec"]["method"], dict(p["spec"]["params"]))
    if p["constant"]:
        est = learners._Constant()
    else:
        est = learners._make_estimator(spec.method, spec.params, p["bin_size_mib"], p["max_bin"])
        est.set_state(p["state"])
    return TrainedModel(spec, np.asarray(p["classes"], dtype=np.int64), int(p["seed"]),
                        int(p["width"]), est, int(p["bin_size_mib"]), int(p["max_bin"]))


def persist_model_set(model_set: ModelSet, store_dir) -> Path:
    files = {"encoder.json": model_set.encoder.to_dict(),
             "window.json": {"train": list(model_set.train_ids), "valid": list(model_set.valid_ids)}}
    ranking = []
    for e in model_set.ranked:
        fname = f"model-{e.method}.json"
        files[fname] = _model_payload(e)
        ranking.append({"method": e.method, "accuracy": e.accuracy, "file": fname})
    manifest = {
        "schema_version": model_set.schema_version,
        "config_digest": model_set.config_digest,
        "created_at": model_set.created_at,
        "consumed": model_set.consumed,
        "mode_bin": model_set.mode_bin,
        "top_n": model_set.top_n,
        "ranking": ranking,
    }
    return store.write_snapshot(store_dir, files, manifest)


def load_model_set(store_dir) -> ModelSet:
    manifest, files = store.read_snapshot(store_dir)
    try:
        encoder = EncoderSnapshot.from_dict(files["encoder.json"])
        entries = []
        for r in manifest["ranking"]:
            model = _model_from_payload(files[r["file"]])
            if model.method != r["method"] or model.width != encoder.width:
                raise StoreCorrupt(f"{r['file']} does not match the manifest")
            entries.append(RankedEntry(r["method"], model, float(r["accuracy"])))
        ranked = RankedModels(tuple(entries))
        window = files.get("window.json", {"train": [], "valid": []})
        model_set = ModelSet(
            encoder=encoder, ranked=ranked, mode_bin=int(manifest["mode_bin"]),
            created_at=int(manifest["created_at"]), consumed=int(manifest["consumed"]),
            top_n=int(manifest["top_n"]), schema_version=int(manifest["schema_version"]),
            train_ids=tuple(window["train"]), valid_ids=tuple(window["valid"]),
            config_digest=manifest.get("config_digest", ""),
        )
    except StoreCorrupt:
        raise
    except (KeyError, TypeError, ValueError, InvalidConfig) as e:
        raise StoreCorrupt(f"malformed snapshot: {e!r}") from e
    if not ranked.is_consistent():
        raise StoreCorrupt("stored ranking disagrees with stored accuracies")
    if len(ranked) < model_set.top_n:
        raise StoreCorrupt("fewer stored models than top_n")
    return model_set


def validation_accuracy(model_set: ModelSet, valid_jobs: Sequence[JobRecord]) -> dict[str, float]:
    labels = encode_dataset(valid_jobs, model_set.encoder).y
    preds = model_set.method_predictions(valid_jobs)
    return {m: accuracy(p, labels) for m, p in preds.items()}
