"""Validation ranking, the accuracy-weighted poll of the top models, and the mode baseline."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import EmptyInput, InvalidConfig, LengthMismatch
from .learners import METHODS

# Summed weights closer than this (relative to the leader) count as tied, so the
# winner does not depend on rounding when all weights are rescaled.
TIE_RTOL = 1e-9

_ORDER = {m: i for i, m in enumerate(METHODS)}


def accuracy(predicted, actual) -> float:
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    if predicted.shape != actual.shape:
        raise LengthMismatch(f"{predicted.shape[0]} predictions for {actual.shape[0]} labels")
    if predicted.size == 0:
        raise EmptyInput("accuracy of an empty sequence")
    return float(np.count_nonzero(predicted == actual)) / predicted.size


@dataclass(frozen=True)
class RankedEntry:
    method: str
    model: Any
    accuracy: float


@dataclass(frozen=True)
class RankedModels:
    entries: tuple[RankedEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def methods(self) -> tuple[str, ...]:
        return tuple(e.method for e in self.entries)

    @property
    def weights(self) -> np.ndarray:
        return np.array([e.accuracy for e in self.entries], dtype=np.float64)

    def top(self, n: int) -> tuple[RankedEntry, ...]:
        return self.entries[:n]

    def is_consistent(self) -> bool:
        keys = [_rank_key(e.method, e.accuracy) for e in self.entries]
        return keys == sorted(keys)


def _rank_key(method: str, acc: float):
    return (-acc, _ORDER.get(method, len(_ORDER)), method)


def rank_order(methods: Sequence[str], accuracies: Sequence[float]) -> list[int]:
    """Indices sorted by accuracy descending, ties by the fixed method order."""
    return sorted(range(len(methods)), key=lambda i: _rank_key(methods[i], float(accuracies[i])))


def rank_models(models_with_predictions: Iterable[tuple[str, Any, Sequence[int]]], validation_labels) -> RankedModels:
    """Rank ``(method, model, validation_predictions)`` triples by validation accuracy."""
    items = list(models_with_predictions)
    if not items:
        raise EmptyInput("no models to rank")
    accs = [accuracy(preds, validation_labels) for _, _, preds in items]
    order = rank_order([m for m, _, _ in items], accs)
    return RankedModels(tuple(RankedEntry(items[i][0], items[i][1], accs[i]) for i in order))


@dataclass(frozen=True)
class PollConfig:
    top_n: int = 4

    def __post_init__(self):
        if int(self.top_n) < 1:
            raise InvalidConfig(f"top_n must be >= 1, got {self.top_n}")

    def check(self, n_models: int) -> None:
        if self.top_n > n_models:
            raise InvalidConfig(f"top_n={self.top_n} exceeds the {n_models} ranked models")


def poll_votes(votes: Sequence[tuple[int, float]]) -> int:
    """Winner of ``(bin, weight)`` votes listed in rank order.

    A tie on summed weight goes to the tied bin whose voter is ranked highest.
    """
    if not votes:
        raise EmptyInput("poll without voters")
    totals: dict[int, float] = {}
    for b, w in votes:
        totals[b] = totals.get(b, 0.0) + w
    best = max(totals.values())
    for b, _ in votes:
        if totals[b] >= best - TIE_RTOL * abs(best):
            return int(b)
    raise AssertionError("unreachable")


def poll_matrix(predictions: np.ndarray, weights) -> np.ndarray:
    """Vectorized poll; ``predictions`` is (voters, jobs) in rank order."""
    P = np.asarray(predictions)
    w = np.asarray(weights, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != len(w):
        raise LengthMismatch(f"{P.shape[0] if P.ndim == 2 else 0} voter rows for {len(w)} weights")
    if P.shape[0] == 0:
        raise EmptyInput("poll without voters")
    # score[v, j] = total weight behind voter v's bin for job j, summed in rank order
    score = np.zeros(P.shape, dtype=np.float64)
    for u in range(P.shape[0]):
        score += np.where(P == P[u], w[u], 0.0)
    best = score.max(axis=0)
    winner = np.argmax(score >= best - TIE_RTOL * np.abs(best), axis=0)
    return P[winner, np.arange(P.shape[1])]


def weighted_poll(ranked: RankedModels, config: PollConfig, row) -> int:
    return int(poll_many(ranked, config, row)[0])


def poll_many(ranked: RankedModels, config: PollConfig, rows) -> np.ndarray:
    config.check(len(ranked))
    voters = ranked.top(config.top_n)
    preds = np.stack([e.model.predict_many(rows) for e in voters])
    return poll_matrix(preds, [e.accuracy for e in voters])


def poll_breakdown(ranked: RankedModels, config: PollConfig, row) -> tuple[int, list[dict]]:
    """Poll one row and report each voter's ballot."""
    config.check(len(ranked))
    ballots = []
    for rank, e in enumerate(ranked.top(config.top_n), start=1):
        ballots.append({"rank": rank, "method": e.method, "bin": int(e.model.predict(row)),
                        "weight": e.accuracy})
    winner = poll_votes([(b["bin"], b["weight"]) for b in ballots])
    return winner, ballots


def mode_baseline(training_labels) -> int:
    labels = np.asarray(training_labels, dtype=np.int64)
    if labels.size == 0:
        raise EmptyInput("mode of an empty label set")
    # argmax returns the first maximum, i.e. the lowest bin on a tie
    return int(np.argmax(np.bincount(labels)))
