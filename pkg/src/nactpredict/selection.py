"""Fold-wise imputation and min-max scaling, and the three feature-ranking methods."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .longitudinal import BINARY_FEATURES
from .models import LRParams, ModelConfig, RFParams, RandomForest, train

SELECTION_METHODS = ("rfe", "rf", "chi2")


@dataclass
class PreprocessState:
    names: List[str]
    minimum: np.ndarray
    maximum: np.ndarray
    median: np.ndarray
    binary: np.ndarray  # bool per feature, passed through unscaled
    fold: str = ""

    def to_dict(self):
        return {"names": self.names, "min": self.minimum.tolist(), "max": self.maximum.tolist(),
                "median": self.median.tolist(), "binary": self.binary.tolist(), "fold": self.fold}


def fit_preprocess(X, names: Optional[Sequence[str]] = None, fold: str = "",
                   binary: Sequence[str] = BINARY_FEATURES) -> PreprocessState:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("preprocessing needs at least one training row")
    names = list(names) if names is not None else [f"f{i}" for i in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise ValueError("names length does not match X")
    observed = ~np.isnan(X)
    # a column with no observed training value imputes to 0
    med = np.array([np.median(X[observed[:, j], j]) if observed[:, j].any() else 0.0 for j in range(X.shape[1])])
    filled = np.where(observed, X, med)
    return PreprocessState(names, filled.min(0), filled.max(0), med,
                           np.array([n in binary for n in names], dtype=bool), fold)


def apply_preprocess(state: PreprocessState, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(state.names):
        raise ValueError(f"expected {len(state.names)} columns")
    X = np.where(np.isnan(X), state.median, X)
    span = state.maximum - state.minimum
    scaled = np.where(span > 0, (X - state.minimum) / np.where(span > 0, span, 1.0), 0.0)
    scaled = np.clip(scaled, 0.0, 1.0)
    return np.where(state.binary, X, scaled)


def _check_two_class(y):
    y = np.asarray(y)
    if len(np.unique(y)) < 2:
        raise ValueError("selection needs both classes present")
    return y.astype(np.int64)


def chi2_scores(X, y) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    y = _check_two_class(y)
    if np.any(X < 0):
        raise ValueError("chi2 needs non-negative features")
    total = X.sum(0)
    score = np.zeros(X.shape[1])
    for c in (0, 1):
        obs = X[y == c].sum(0)
        exp = total * np.mean(y == c)
        score += np.where(exp > 0, (obs - exp) ** 2 / np.where(exp > 0, exp, 1.0), 0.0)
    return score


def rf_importance(X, y, seed: int = 0, params: RFParams = RFParams()) -> np.ndarray:
    _check_two_class(y)
    return RandomForest.fit(X, y, params, seed=seed).importances


@dataclass
class SelectionResult:
    method: str
    selected: List[str]
    scores: Dict[str, float] = field(default_factory=dict)

    @property
    def k(self):
        return len(self.selected)

    def indices(self, names: Sequence[str]) -> List[int]:
        pos = {n: i for i, n in enumerate(names)}
        return [pos[n] for n in self.selected]

    def to_dict(self):
        return {"method": self.method, "k": self.k, "selected": self.selected, "scores": self.scores}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(d["method"], list(d["selected"]), {k: float(v) for k, v in d["scores"].items()})


def _names(X, names):
    return list(names) if names is not None else [f"f{i}" for i in range(np.shape(X)[1])]


def _check_k(k, d):
    if not 1 <= k <= d:
        raise ValueError(f"k must lie in [1, {d}], got {k}")


def rfe_order(X, y, seed: int = 0, params: LRParams = LRParams(), stop: int = 1) -> List[int]:
    """Feature indices in elimination order (first dropped first); the last `stop` are the survivors."""
    X = np.asarray(X, dtype=np.float64)
    y = _check_two_class(y)
    keep = list(range(X.shape[1]))
    dropped = []
    cfg = ModelConfig("lr", params)
    while len(keep) > stop:
        coef = np.abs(train(cfg, X[:, keep], y, seed).coef)
        dropped.append(keep.pop(int(np.argmin(coef))))
    return dropped + keep


def rfe(X, y, k: int, seed: int = 0, names=None, params: LRParams = LRParams()) -> SelectionResult:
    names = _names(X, names)
    _check_k(k, len(names))
    order = rfe_order(X, y, seed, params, stop=k)
    survivors = sorted(order[len(order) - k:])
    # score = elimination round (survivors share the top rank)
    scores = {names[j]: float(r) for r, j in enumerate(order[: len(order) - k])}
    scores.update({names[j]: float(len(order) - k) for j in survivors})
    return SelectionResult("rfe", [names[j] for j in survivors], scores)


def top_k(scores: np.ndarray, k: int) -> List[int]:
    """Indices of the k largest scores, ties broken by schema order."""
    order = np.lexsort((np.arange(len(scores)), -np.asarray(scores)))
    return sorted(int(i) for i in order[:k])


def ranking(method: str, X, y, seed: int = 0) -> np.ndarray:
    """Scores such that larger means more important, for a top-k cut at any k."""
    if method == "chi2":
        return chi2_scores(X, y)
    if method == "rf":
        return rf_importance(X, y, seed)
    if method == "rfe":
        order = rfe_order(X, y, seed)
        s = np.empty(len(order))
        s[order] = np.arange(len(order), dtype=np.float64)
        return s
    raise ValueError(f"unknown selection method {method!r}; expected one of {SELECTION_METHODS}")


def select(method: str, X, y, k: int, seed: int = 0, names=None) -> SelectionResult:
    names = _names(X, names)
    if method not in SELECTION_METHODS:
        raise ValueError(f"unknown selection method {method!r}; expected one of {SELECTION_METHODS}")
    _check_k(k, len(names))
    if method == "rfe":
        return rfe(X, y, k, seed, names)
    scores = ranking(method, X, y, seed)
    return SelectionResult(method, [names[j] for j in top_k(scores, k)],
                           {n: float(s) for n, s in zip(names, scores)})


def select_from_ranking(method: str, scores: np.ndarray, k: int, names) -> SelectionResult:
    _check_k(k, len(names))
    return SelectionResult(method, [names[j] for j in top_k(scores, k)],
                           {n: float(s) for n, s in zip(names, scores)})
