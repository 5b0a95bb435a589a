"""Turn job records into design matrices and memory labels into bins."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyTrainingSet, InvalidConfig, MissingLabel
from .workload import JobRecord, derive_calendar_features

CATEGORICAL_FEATURES = ("user", "group", "queue", "cwd", "resreq", "command")
NUMERIC_FEATURES = (
    "priority",
    "submit_time",
    "req_time",
    "req_procs",
    "weekday",
    "time_since_midnight",
)
OTHER = "<OTHER>"


def memory_to_bin(mem_mib: float, bin_size_mib: int = 512, max_bin: int = 256) -> int:
    return min(int(math.floor(mem_mib / bin_size_mib)), max_bin)


def bin_to_request_mib(bin_index: int, bin_size_mib: int = 512) -> float:
    """Upper edge of a bin: requesting this much covers every usage inside it."""
    return float((bin_index + 1) * bin_size_mib)


@dataclass(frozen=True)
class FeatureSelection:
    categorical: tuple[str, ...] = CATEGORICAL_FEATURES
    numeric: tuple[str, ...] = NUMERIC_FEATURES
    label_name: str = "max_mem"

    def __post_init__(self):
        object.__setattr__(self, "categorical", tuple(self.categorical))
        object.__setattr__(self, "numeric", tuple(self.numeric))
        if not self.categorical and not self.numeric:
            raise InvalidConfig("feature selection is empty")
        bad = set(self.categorical) - set(CATEGORICAL_FEATURES)
        bad |= set(self.numeric) - set(NUMERIC_FEATURES)
        if bad:
            raise InvalidConfig(f"unknown features {sorted(bad)}")
        if len(set(self.categorical)) != len(self.categorical) or len(set(self.numeric)) != len(self.numeric):
            raise InvalidConfig("duplicate feature in selection")

    def ordered(self) -> tuple[tuple[str, ...], tuple[str, ...]]:
        # Column layout never depends on the order features were listed in.
        cats = tuple(f for f in CATEGORICAL_FEATURES if f in self.categorical)
        nums = tuple(f for f in NUMERIC_FEATURES if f in self.numeric)
        return cats, nums

    def to_dict(self) -> dict:
        cats, nums = self.ordered()
        return {"categorical": list(cats), "numeric": list(nums)}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSelection":
        return cls(tuple(d.get("categorical", ())), tuple(d.get("numeric", ())))


def _numeric_value(job: JobRecord, name: str) -> float:
    if name == "weekday":
        return float(derive_calendar_features(job.submit_time)[0])
    if name == "time_since_midnight":
        return float(derive_calendar_features(job.submit_time)[1])
    return float(getattr(job, name))


@dataclass(frozen=True)
class FeatureDictionary:
    """Dense category ids per categorical feature; anything else maps to OTHER."""

    ids: dict[str, dict[str, int]]
    frequencies: dict[str, dict[str, int]]

    def cardinality(self, feature: str) -> int:
        return len(self.ids[feature])

    def lookup(self, feature: str, value: str) -> int:
        m = self.ids[feature]
        return m.get(value, len(m))

    def to_dict(self) -> dict:
        return {
            "ids": {f: sorted(m, key=m.__getitem__) for f, m in self.ids.items()},
            "frequencies": {f: dict(sorted(c.items())) for f, c in self.frequencies.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureDictionary":
        ids = {f: {cat: i for i, cat in enumerate(cats)} for f, cats in d["ids"].items()}
        return cls(ids, {f: dict(c) for f, c in d["frequencies"].items()})


def build_dictionary(
    training_jobs: Sequence[JobRecord],
    selection: FeatureSelection,
    cardinality_cap: int = 1024,
) -> FeatureDictionary:
    if not training_jobs:
        raise EmptyTrainingSet("cannot build a feature dictionary from no jobs")
    cats, _ = selection.ordered()
    ids, freqs = {}, {}
    for feat in cats:
        counts = Counter(getattr(j, feat) for j in training_jobs)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:cardinality_cap]
        ids[feat] = {cat: i for i, (cat, _) in enumerate(ranked)}
        freqs[feat] = dict(counts)
    return FeatureDictionary(ids, freqs)


@dataclass(frozen=True)
class EncoderSnapshot:
    selection: FeatureSelection
    dictionary: FeatureDictionary
    means: dict[str, float]
    stds: dict[str, float]
    bin_size_mib: int = 512
    max_bin: int = 256
    columns: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.columns:
            object.__setattr__(self, "columns", column_layout(self.selection, self.dictionary))

    @property
    def width(self) -> int:
        return len(self.columns)

    def to_dict(self) -> dict:
        return {
            "selection": self.selection.to_dict(),
            "dictionary": self.dictionary.to_dict(),
            "means": self.means,
            "stds": self.stds,
            "bin_size_mib": self.bin_size_mib,
            "max_bin": self.max_bin,
            "columns": list(self.columns),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSnapshot":
        snap = cls(
            FeatureSelection.from_dict(d["selection"]),
            FeatureDictionary.from_dict(d["dictionary"]),
            {k: float(v) for k, v in d["means"].items()},
            {k: float(v) for k, v in d["stds"].items()},
            int(d["bin_size_mib"]),
            int(d["max_bin"]),
        )
        if list(snap.columns) != list(d["columns"]):
            raise ValueError("stored column layout disagrees with dictionary")
        return snap


def column_layout(selection: FeatureSelection, dictionary: FeatureDictionary) -> tuple[str, ...]:
    cats, nums = selection.ordered()
    cols = []
    for feat in cats:
        m = dictionary.ids[feat]
        cols.extend(f"{feat}={cat}" for cat in sorted(m, key=m.__getitem__))
        cols.append(f"{feat}={OTHER}")
    cols.extend(nums)
    return tuple(cols)


def fit_encoder(
    training_jobs: Sequence[JobRecord],
    selection: FeatureSelection | None = None,
    *,
    bin_size_mib: int = 512,
    max_bin: int = 256,
    cardinality_cap: int = 1024,
) -> EncoderSnapshot:
    selection = selection or FeatureSelection()
    if not training_jobs:
        raise EmptyTrainingSet("cannot fit an encoder on no jobs")
    for j in training_jobs:
        if not j.finished:
            raise MissingLabel(j.job_id)
    dictionary = build_dictionary(training_jobs, selection, cardinality_cap)
    _, nums = selection.ordered()
    means, stds = {}, {}
    for name in nums:
        values = np.array([_numeric_value(j, name) for j in training_jobs], dtype=np.float64)
        means[name] = float(values.mean())
        stds[name] = float(values.std())
    return EncoderSnapshot(selection, dictionary, means, stds, bin_size_mib, max_bin)


@dataclass
class EncodedDataset:
    X: np.ndarray  # normalized numerics
    X_raw: np.ndarray  # same layout, numerics left as-is
    y: np.ndarray  # bin indices
    mem_mib: np.ndarray
    job_ids: list[str]

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "EncodedDataset":
        idx = np.asarray(idx)
        return EncodedDataset(
            self.X[idx], self.X_raw[idx], self.y[idx], self.mem_mib[idx],
            [self.job_ids[i] for i in idx],
        )

    @classmethod
    def from_arrays(cls, X, y, mem_mib=None, job_ids=None) -> "EncodedDataset":
        """Wrap a plain matrix; the same values serve as normalized and raw input."""
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if mem_mib is None:
            mem_mib = (y + 0.5) * 512.0
        if job_ids is None:
            job_ids = [str(i) for i in range(len(y))]
        return cls(X, X, y, np.asarray(mem_mib, dtype=np.float64), list(job_ids))


@dataclass(frozen=True)
class EncodedRows:
    """The two views of the same jobs; each learner picks the one it consumes."""

    normalized: np.ndarray
    raw: np.ndarray


def encode_jobs(jobs: Sequence[JobRecord], snapshot: EncoderSnapshot) -> EncodedRows:
    cats, nums = snapshot.selection.ordered()
    n = len(jobs)
    raw = np.zeros((n, snapshot.width), dtype=np.float64)
    offset = 0
    rows = np.arange(n)
    for feat in cats:
        lookup = snapshot.dictionary.lookup
        ids = np.fromiter((lookup(feat, getattr(j, feat)) for j in jobs), dtype=np.int64, count=n)
        raw[rows, offset + ids] = 1.0
        offset += snapshot.dictionary.cardinality(feat) + 1
    norm = raw.copy()
    for k, name in enumerate(nums):
        col = offset + k
        values = np.fromiter((_numeric_value(j, name) for j in jobs), dtype=np.float64, count=n)
        raw[:, col] = values
        std = snapshot.stds[name]
        norm[:, col] = (values - snapshot.means[name]) / std if std > 0 else 0.0
    return EncodedRows(norm, raw)


def encode_job(job: JobRecord, snapshot: EncoderSnapshot) -> np.ndarray:
    return encode_jobs([job], snapshot).normalized[0]


def encode_dataset(jobs: Sequence[JobRecord], snapshot: EncoderSnapshot) -> EncodedDataset:
    for j in jobs:
        if not j.finished:
            raise MissingLabel(j.job_id)
    rows = encode_jobs(jobs, snapshot)
    mem = np.array([j.max_mem_mib for j in jobs], dtype=np.float64)
    y = np.array(
        [memory_to_bin(m, snapshot.bin_size_mib, snapshot.max_bin) for m in mem], dtype=np.int64
    )
    return EncodedDataset(rows.normalized, rows.raw, y, mem, [j.job_id for j in jobs])
