"""Classifiers trained from scratch: random forest, logistic regression, kernel SVM, MLP."""

from __future__ import annotations

import json
import os
from typing import Optional, Sequence, Union

import numpy as np

from .base import (
    MODEL_FORMAT,
    MODEL_KINDS,
    MODEL_VERSION,
    ConvergenceError,
    LRParams,
    MLPParams,
    ModelConfig,
    RFParams,
    SchemaMismatch,
    SVMParams,
    TrainedModel,
)
from .forest import RandomForest, Tree
from .logistic import LogisticRegression
from .mlp import MLP
from .svm import KernelSVM

_CLASSES = {"rf": RandomForest, "lr": LogisticRegression, "ksvm": KernelSVM, "mlp": MLP}


def train(cfg: Union[ModelConfig, str], X, y, seed: int = 0, feature_names: Optional[Sequence[str]] = None) -> TrainedModel:
    if isinstance(cfg, str):
        cfg = ModelConfig(cfg)
    X = np.asarray(X, dtype=np.float64)
    if feature_names is not None and len(feature_names) != X.shape[1]:
        raise SchemaMismatch("feature_names length does not match X")
    return _CLASSES[cfg.kind].fit(X, y, cfg.params, seed=seed, feature_names=feature_names)


def predict_proba(model: TrainedModel, X, feature_names: Optional[Sequence[str]] = None) -> np.ndarray:
    return model.predict_proba(X, feature_names)


def predict(model: TrainedModel, X, feature_names: Optional[Sequence[str]] = None) -> np.ndarray:
    return model.predict(X, feature_names)


def model_from_dict(doc: dict) -> TrainedModel:
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ValueError("not a supported model document")
    kind, p, names = doc["kind"], doc["params"], doc["feature_names"] or None
    if kind == "lr":
        return LogisticRegression(p["coef"], p["intercept"], names)
    if kind == "rf":
        return RandomForest.from_params(p, names)
    if kind == "ksvm":
        return KernelSVM(p["support"], p["coef"], p["rho"], p["gamma"], p["kernel"], p["degree"], p["platt"], names)
    if kind == "mlp":
        return MLP(p["layers"], p["n_iter"], names)
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model: TrainedModel, path: Union[str, os.PathLike]) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, sort_keys=True)


def load_model(path: Union[str, os.PathLike]) -> TrainedModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


__all__ = [
    "MODEL_KINDS", "ConvergenceError", "LRParams", "MLPParams", "ModelConfig", "RFParams", "SchemaMismatch",
    "SVMParams", "TrainedModel", "RandomForest", "Tree", "LogisticRegression", "MLP", "KernelSVM",
    "train", "predict_proba", "predict", "model_from_dict", "save_model", "load_model",
]
