from __future__ import annotations

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .base import ConvergenceError, LRParams, TrainedModel, check_training_data


def loss_and_grad(theta: np.ndarray, X: np.ndarray, y: np.ndarray, l2_weight: float):
    """Mean log-loss plus (l2_weight / 2) * ||w||^2; theta = (w..., b), bias unpenalised."""
    w, b = theta[:-1], theta[-1]
    z = X @ w + b
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2_weight * np.dot(w, w)
    r = (expit(z) - y) / len(y)
    grad = np.empty_like(theta)
    grad[:-1] = X.T @ r + l2_weight * w
    grad[-1] = r.sum()
    return float(loss), grad


class LogisticRegression(TrainedModel):
    kind = "lr"

    def __init__(self, coef, intercept, feature_names=None):
        super().__init__(feature_names)
        self.coef = np.asarray(coef, dtype=np.float64)
        self.intercept = float(intercept)

    @classmethod
    def fit(cls, X, y, params: LRParams = LRParams(), seed: int = 0, feature_names=None):
        X, y = check_training_data(X, y)
        theta0 = np.zeros(X.shape[1] + 1)
        res = minimize(
            loss_and_grad, theta0, args=(X, y.astype(np.float64), params.l2_weight), jac=True,
            method="L-BFGS-B", options={"maxiter": params.max_iter, "gtol": params.tol, "ftol": 0.0},
        )
        grad = loss_and_grad(res.x, X, y.astype(np.float64), params.l2_weight)[1]
        # L-BFGS-B reports line-search failures at machine precision; judge by the gradient
        if not res.success and np.max(np.abs(grad)) > 1e-6:
            raise ConvergenceError(f"logistic regression did not converge: {res.message}")
        return cls(res.x[:-1], res.x[-1], feature_names)

    def decision_function(self, X):
        return self._check(X) @ self.coef + self.intercept

    def _proba(self, X):
        return expit(X @ self.coef + self.intercept)

    def get_params(self):
        return {"coef": self.coef.tolist(), "intercept": self.intercept}
