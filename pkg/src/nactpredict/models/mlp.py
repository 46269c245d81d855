from __future__ import annotations

from typing import List, Tuple

import numpy as np
from scipy.special import expit

from .base import MLPParams, TrainedModel, check_training_data


def init_params(rng, sizes) -> List[Tuple[np.ndarray, np.ndarray]]:
    """He-normal weights, zero biases."""
    return [(rng.normal(0.0, np.sqrt(2.0 / a), (a, b)), np.zeros(b)) for a, b in zip(sizes[:-1], sizes[1:])]


def forward(layers, X):
    h = X
    for W, b in layers[:-1]:
        h = np.maximum(h @ W + b, 0.0)
    W, b = layers[-1]
    return (h @ W + b)[:, 0]


def loss_and_grad(layers, X, y, alpha):
    """Mean log-loss + alpha * ||W||^2 / (2n) over weight matrices; grads match layers."""
    n = len(y)
    acts = [X]
    for W, b in layers[:-1]:
        acts.append(np.maximum(acts[-1] @ W + b, 0.0))
    W, b = layers[-1]
    z = (acts[-1] @ W + b)[:, 0]
    loss = np.mean(np.logaddexp(0.0, z) - y * z)
    loss += alpha / (2 * n) * sum(np.sum(W * W) for W, _ in layers)
    delta = ((expit(z) - y) / n)[:, None]
    grads = [None] * len(layers)
    for k in range(len(layers) - 1, -1, -1):
        W, b = layers[k]
        grads[k] = (acts[k].T @ delta + alpha / n * W, delta.sum(0))
        if k > 0:
            delta = (delta @ W.T) * (acts[k] > 0)
    return float(loss), grads


class MLP(TrainedModel):
    kind = "mlp"

    def __init__(self, layers, n_iter=0, feature_names=None):
        super().__init__(feature_names)
        self.layers = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64)) for W, b in layers]
        self.n_iter = int(n_iter)

    @classmethod
    def fit(cls, X, y, params: MLPParams = MLPParams(), seed: int = 0, feature_names=None):
        X, y = check_training_data(X, y)
        y = y.astype(np.float64)
        rng = np.random.default_rng(seed)
        layers = init_params(rng, [X.shape[1], *params.hidden, 1])
        flat = [p for layer in layers for p in layer]
        m = [np.zeros_like(p) for p in flat]
        v = [np.zeros_like(p) for p in flat]
        b1, b2, eps = 0.9, 0.999, 1e-8
        best, stall, it = np.inf, 0, 0
        for it in range(1, params.max_iter + 1):
            loss, grads = loss_and_grad(layers, X, y, params.alpha)
            g = [p for layer in grads for p in layer]
            lr_t = params.lr * np.sqrt(1 - b2 ** it) / (1 - b1 ** it)
            for p, gp, mp, vp in zip(flat, g, m, v):
                mp *= b1
                mp += (1 - b1) * gp
                vp *= b2
                vp += (1 - b2) * gp * gp
                p -= lr_t * mp / (np.sqrt(vp) + eps)
            if loss > best - params.tol:
                stall += 1
                if stall >= params.n_iter_no_change:
                    break
            else:
                stall = 0
            best = min(best, loss)
        return cls(layers, it, feature_names)

    def _proba(self, X):
        return expit(forward(self.layers, X))

    def get_params(self):
        return {"layers": [[W.tolist(), b.tolist()] for W, b in self.layers], "n_iter": self.n_iter}
