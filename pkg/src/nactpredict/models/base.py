from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

MODEL_FORMAT = "nactpredict.model"
MODEL_VERSION = 1


class ConvergenceError(RuntimeError):
    pass


class SchemaMismatch(ValueError):
    pass


@dataclass
class RFParams:
    n_trees: int = 100
    criterion: str = "gini"
    max_depth: int = 20
    min_leaf: int = 4
    min_split: int = 4


@dataclass
class LRParams:
    l2_weight: float = 0.4
    optimizer: str = "lbfgs"
    max_iter: int = 7000
    tol: float = 1e-10


@dataclass
class SVMParams:
    c: float = 10.0
    kernel: str = "rbf"
    degree: int = 3
    max_iter: int = 15000
    tol: float = 1e-3


@dataclass
class MLPParams:
    hidden: Tuple[int, ...] = (100, 100, 100)
    activation: str = "relu"
    optimizer: str = "adam"
    alpha: float = 1e-4
    lr: float = 1e-3
    max_iter: int = 15000
    tol: float = 1e-4
    n_iter_no_change: int = 10


_PARAMS = {"rf": RFParams, "lr": LRParams, "ksvm": SVMParams, "mlp": MLPParams}
MODEL_KINDS = tuple(_PARAMS)


@dataclass
class ModelConfig:
    kind: str
    params: object = None

    def __post_init__(self):
        if self.kind not in _PARAMS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        cls = _PARAMS[self.kind]
        if self.params is None:
            self.params = cls()
        elif isinstance(self.params, dict):
            unknown = set(self.params) - set(cls.__dataclass_fields__)
            if unknown:
                raise ValueError(f"unknown {self.kind} parameters: {sorted(unknown)}")
            self.params = cls(**self.params)
        self._validate()

    def _validate(self):
        p = self.params
        if self.kind == "rf" and min(p.n_trees, p.max_depth, p.min_leaf, p.min_split) < 1:
            raise ValueError("random forest counts must be >= 1")
        if self.kind == "lr" and (p.l2_weight <= 0 or p.max_iter < 1):
            raise ValueError("l2_weight must be > 0 and max_iter >= 1")
        if self.kind == "ksvm":
            if p.c <= 0 or p.max_iter < 1:
                raise ValueError("c must be > 0 and max_iter >= 1")
            if p.kernel not in ("rbf", "poly", "linear"):
                raise ValueError(f"unknown kernel {p.kernel!r}")
        if self.kind == "mlp":
            p.hidden = tuple(int(h) for h in p.hidden)
            if min(p.hidden) < 1 or p.max_iter < 1:
                raise ValueError("hidden sizes and max_iter must be >= 1")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": asdict(self.params)}


class TrainedModel:
    """Common surface of the four classifiers."""

    kind: str = ""

    def __init__(self, feature_names: Optional[Sequence[str]] = None):
        self.feature_names: List[str] = list(feature_names or [])

    def _check(self, X, feature_names=None) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be 2-D")
        if feature_names is not None and self.feature_names and list(feature_names) != self.feature_names:
            raise SchemaMismatch("feature names differ from the training schema")
        if self.feature_names and X.shape[1] != len(self.feature_names):
            raise SchemaMismatch(f"expected {len(self.feature_names)} features, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        return X

    def predict_proba(self, X, feature_names=None) -> np.ndarray:
        return self._proba(self._check(X, feature_names))

    def predict(self, X, feature_names=None) -> np.ndarray:
        return (self.predict_proba(X, feature_names) >= 0.5).astype(int)

    def _proba(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def get_params(self) -> Dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": self.kind,
            "feature_names": self.feature_names,
            "params": self.get_params(),
        }


def check_training_data(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per label")
    if len(y) < 2:
        raise ValueError("need at least two training rows")
    if not np.all(np.isfinite(X)):
        raise ValueError("training data contains non-finite values")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if len(np.unique(y)) < 2:
        raise ValueError("training labels contain a single class")
    return X, y.astype(np.int64)
