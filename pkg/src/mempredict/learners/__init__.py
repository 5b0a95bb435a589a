"""The seven memory-bin predictors behind one train/predict contract."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import EmptyTrainingSet, InvalidConfig, WidthMismatch
from ..featurization import EncodedDataset, EncodedRows
from .forest import DecisionTree, RandomForest, information_gain
from .knn import KNNBinRegressor, KNNClassifier
from .mlp import MLP, mlp_gradient
from .svm import KernelSVM, LinearSVM, rbf_kernel

METHODS = ("svm-1", "svm-2", "rforest", "mlp-1", "mlp-2", "knn-1", "knn-2")
GRID_METHODS = ("svm-2", "mlp-2")

__all__ = [
    "METHODS", "GRID_METHODS", "LearnerSpec", "TrainedModel", "train", "predict",
    "grid_search", "grid_candidates", "default_spec", "rbf_kernel", "information_gain",
    "mlp_gradient", "DecisionTree", "RandomForest", "LinearSVM", "KernelSVM", "MLP",
    "KNNClassifier", "KNNBinRegressor",
]

_SVM_CS = (0.1, 1.0, 10.0, 100.0)
_SVM_GAMMAS = (1e-3, 1e-4)
_MLP_LAYERS = ((256, 128, 64, 32), (128, 64, 32), (256, 64, 32))
_MLP_SCHEDULES = ("constant", "invscaling")
_MLP_ALPHAS = (0.01, 0.001, 0.0001)


@dataclass(frozen=True)
class LearnerSpec:
    method: str
    params: dict[str, Any] = field(default_factory=dict)
    # candidate parameter sets; empty once resolved
    grid: tuple[dict[str, Any], ...] = ()

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidConfig(f"unknown method {self.method!r}")

    def resolved(self, params: dict[str, Any]) -> "LearnerSpec":
        return LearnerSpec(self.method, dict(params))

    def to_dict(self) -> dict:
        return {"method": self.method, "params": _jsonable(self.params)}


def _jsonable(params):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}


def grid_candidates(method: str, profile: str = "full", enable_lbfgs: bool = False) -> list[dict]:
    """Hyperparameter candidates in their fixed enumeration order."""
    if method == "svm-2":
        if profile == "fast":
            return [
                {"kernel": "linear", "C": 1.0},
                {"kernel": "linear", "C": 100.0},
                {"kernel": "rbf", "C": 1.0, "gamma": 1e-3},
            ]
        linear = [{"kernel": "linear", "C": c} for c in _SVM_CS]
        rbf = [{"kernel": "rbf", "C": c, "gamma": g} for c in _SVM_CS for g in _SVM_GAMMAS]
        return linear + rbf
    if method == "mlp-2":
        base = {"activation": "tanh", "lr": 0.001, "beta1": 0.9, "beta2": 0.999}
        if profile == "fast":
            return [{**base, "hidden": (128, 64, 32), "optimizer": "adam",
                     "schedule": "constant", "shuffle": True, "alpha": 0.001}]
        optimizers = ("nesterov", "adam") + (("lbfgs",) if enable_lbfgs else ())
        return [
            {**base, "hidden": h, "optimizer": o, "schedule": s, "shuffle": sh, "alpha": a}
            for h, o, s, sh, a in itertools.product(
                _MLP_LAYERS, optimizers, _MLP_SCHEDULES, (True, False), _MLP_ALPHAS
            )
        ]
    raise InvalidConfig(f"{method} has no hyperparameter grid")


def default_spec(method: str, profile: str = "full", enable_lbfgs: bool = False) -> LearnerSpec:
    if profile not in ("full", "fast"):
        raise InvalidConfig(f"unknown grid profile {profile!r}")
    if method == "svm-1":
        return LearnerSpec(method, {"kernel": "linear", "C": 0.01})
    if method == "rforest":
        return LearnerSpec(method, {"n_trees": 20, "max_depth": 25, "max_candidates": 32, "bootstrap": True})
    if method == "mlp-1":
        return LearnerSpec(method, {"hidden": (128, 64, 32), "optimizer": "sgd", "schedule": "constant",
                                    "shuffle": True, "alpha": 0.0001, "lr": 0.01, "activation": "tanh"})
    if method in ("knn-1", "knn-2"):
        return LearnerSpec(method, {"k": 5})
    return LearnerSpec(method, grid=tuple(grid_candidates(method, profile, enable_lbfgs)))


def _make_estimator(method, params, bin_size_mib, max_bin):
    if method in ("svm-1", "svm-2"):
        if params.get("kernel", "linear") == "linear":
            return LinearSVM(C=params["C"], epochs=params.get("epochs", 20))
        return KernelSVM(C=params["C"], gamma=params["gamma"], epochs=params.get("epochs", 20),
                         support_cap=params.get("support_cap", 2000))
    if method == "rforest":
        return RandomForest(params.get("n_trees", 20), params.get("max_depth", 25),
                            params.get("max_candidates", 32), params.get("bootstrap", True))
    if method in ("mlp-1", "mlp-2"):
        return MLP(
            hidden=tuple(params["hidden"]), optimizer=params["optimizer"],
            schedule=params.get("schedule", "constant"), shuffle=params.get("shuffle", True),
            alpha=params["alpha"], lr=params["lr"], batch_size=params.get("batch_size", 32),
            epochs=params.get("epochs", 50), beta1=params.get("beta1", 0.9),
            beta2=params.get("beta2", 0.999),
        )
    if method == "knn-1":
        return KNNClassifier(params.get("k", 5))
    if method == "knn-2":
        return KNNBinRegressor(params.get("k", 5), bin_size_mib, max_bin)
    raise InvalidConfig(method)


class _Constant:
    def fit(self, X, y_idx, n_classes, rng=None, **_):
        return self

    def predict_index(self, X):
        return np.zeros(X.shape[0], dtype=np.intp)

    def get_state(self):
        return {}

    def set_state(self, state):
        return self


@dataclass
class TrainedModel:
    spec: LearnerSpec
    classes: np.ndarray  # observed bins, ascending
    seed: int
    width: int
    estimator: Any
    bin_size_mib: int = 512
    max_bin: int = 256

    @property
    def method(self) -> str:
        return self.spec.method

    @property
    def input_space(self) -> str:
        # trees split on thresholds, so they take the un-normalized matrix
        return "raw" if self.method == "rforest" else "normalized"

    def _matrix(self, X) -> np.ndarray:
        if isinstance(X, EncodedRows):
            X = X.raw if self.input_space == "raw" else X.normalized
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.width:
            raise WidthMismatch(self.width, X.shape[1])
        return X

    def predict_many(self, X) -> np.ndarray:
        X = self._matrix(X)
        if X.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        return self.classes[self.estimator.predict_index(X)]

    def predict(self, row) -> int:
        return int(self.predict_many(row)[0])

    @property
    def constant(self) -> bool:
        return isinstance(self.estimator, _Constant)


def _rng(seed, *tags):
    return np.random.default_rng([int(seed) % 2**64, *tags])


def _fit(spec, data: EncodedDataset, seed, bin_size_mib, max_bin, input_space=None):
    if len(data) == 0:
        raise EmptyTrainingSet(f"{spec.method}: empty training set")
    classes, y_idx = np.unique(data.y, return_inverse=True)
    X = data.X_raw if spec.method == "rforest" else data.X
    if len(classes) == 1:
        est = _Constant()
    else:
        est = _make_estimator(spec.method, spec.params, bin_size_mib, max_bin)
        kwargs = {"mem_mib": data.mem_mib, "classes": classes} if spec.method == "knn-2" else {}
        est.fit(X, y_idx.astype(np.intp), len(classes), _rng(seed, 0), **kwargs)
    return TrainedModel(spec, classes.astype(np.int64), int(seed), X.shape[1], est, bin_size_mib, max_bin)


def grid_search(
    spec: LearnerSpec,
    train_set: EncodedDataset,
    seed: int,
    folds: int = 3,
    *,
    bin_size_mib: int = 512,
    max_bin: int = 256,
) -> LearnerSpec:
    """Pick the candidate with the best mean k-fold accuracy; ties go to the earliest.

    Folds are assigned round-robin by row position.
    """
    candidates = list(spec.grid) or [spec.params]
    if len(train_set) == 0:
        raise EmptyTrainingSet("grid search needs training rows")
    if len(candidates) == 1:
        return spec.resolved(candidates[0])
    if len(train_set) < folds:
        raise EmptyTrainingSet(f"grid search needs at least {folds} rows")
    fold_of = np.arange(len(train_set)) % folds
    best, best_score = None, -1.0
    for ci, params in enumerate(candidates):
        cand = spec.resolved(params)
        scores = []
        for f in range(folds):
            tr = train_set.subset(np.flatnonzero(fold_of != f))
            va = train_set.subset(np.flatnonzero(fold_of == f))
            model = _fit(cand, tr, _rng(seed, 1, ci, f).integers(2**63), bin_size_mib, max_bin)
            scores.append(float(np.mean(model.predict_many(EncodedRows(va.X, va.X_raw)) == va.y)))
        score = float(np.mean(scores))
        if score > best_score:
            best, best_score = cand, score
    return best


def train(
    spec: LearnerSpec,
    train_set: EncodedDataset,
    seed: int,
    *,
    bin_size_mib: int = 512,
    max_bin: int = 256,
    folds: int = 3,
) -> TrainedModel:
    if len(train_set) == 0:
        raise EmptyTrainingSet(f"{spec.method}: empty training set")
    if spec.grid:
        spec = grid_search(spec, train_set, seed, folds, bin_size_mib=bin_size_mib, max_bin=max_bin)
    return _fit(spec, train_set, seed, bin_size_mib, max_bin)


def predict(model: TrainedModel, row) -> int:
    return model.predict(row)
