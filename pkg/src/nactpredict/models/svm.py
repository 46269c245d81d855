"""C-SVC trained by SMO with second-order working-set selection, plus Platt scaling."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.optimize import minimize

from .base import SVMParams, TrainedModel, check_training_data

TAU = 1e-12


def kernel_matrix(A, B, kernel: str, gamma: float, degree: int = 3):
    if kernel == "linear":
        return A @ B.T
    if kernel == "poly":
        return (gamma * (A @ B.T)) ** degree
    sq = np.sum(A * A, 1)[:, None] + np.sum(B * B, 1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def smo(K, y, C, tol=1e-3, max_iter=15000):
    """Solve min 1/2 a'Qa - e'a, 0 <= a <= C, y'a = 0. Returns (alpha, rho, converged)."""
    n = len(y)
    Q = (y[:, None] * y[None, :]) * K
    alpha = np.zeros(n)
    G = -np.ones(n)
    diag = np.diag(K)
    converged = False
    for _ in range(max_iter):
        yG = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.argmax(np.where(up, yG, -np.inf)))
        g_max = yG[i]
        g_min = np.min(yG[low])
        if g_max - g_min < tol:
            converged = True
            break
        b = g_max - yG
        a = diag[i] + diag - 2.0 * K[i]
        a = np.where(a > 0, a, TAU)
        cand = low & (b > 0)
        j = int(np.argmin(np.where(cand, -(b * b) / a, np.inf)))
        t = b[j] / a[j]
        room_i = C - alpha[i] if y[i] > 0 else alpha[i]
        room_j = alpha[j] if y[j] > 0 else C - alpha[j]
        t = min(t, room_i, room_j)
        di, dj = y[i] * t, -y[j] * t
        alpha[i] = np.clip(alpha[i] + di, 0.0, C)
        alpha[j] = np.clip(alpha[j] + dj, 0.0, C)
        G += Q[:, i] * di + Q[:, j] * dj
    yg = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(np.mean(yg[free]))
    else:
        # midpoint of the feasible interval for rho
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        ub = np.min(yg[up]) if up.any() else np.inf
        lb = np.max(yg[low]) if low.any() else -np.inf
        if not np.isfinite(ub):
            ub = lb
        if not np.isfinite(lb):
            lb = ub
        rho = 0.5 * (ub + lb)
    return alpha, rho, converged


def platt_loss(ab, f, t):
    a, b = ab
    z = a * f + b
    # p = 1 / (1 + exp(z)); loss = -sum t log p + (1 - t) log(1 - p)
    loss = np.sum(np.logaddexp(0.0, z) - (1.0 - t) * z)
    s = 1.0 / (1.0 + np.exp(-z)) - (1.0 - t)
    return float(loss), np.array([np.dot(s, f), s.sum()])


def fit_platt(f, y):
    n_pos = int(np.sum(y == 1))
    n_neg = len(y) - n_pos
    t = np.where(y == 1, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    x0 = np.array([0.0, np.log((n_neg + 1.0) / (n_pos + 1.0))])
    res = minimize(platt_loss, x0, args=(f, t), jac=True, method="BFGS")
    return float(res.x[0]), float(res.x[1])


class KernelSVM(TrainedModel):
    kind = "ksvm"

    def __init__(self, support, coef, rho, gamma, kernel, degree, platt, feature_names=None):
        super().__init__(feature_names)
        self.support = np.atleast_2d(np.asarray(support, dtype=np.float64))
        self.coef = np.asarray(coef, dtype=np.float64)
        self.rho = float(rho)
        self.gamma = float(gamma)
        self.kernel = kernel
        self.degree = int(degree)
        self.platt = tuple(float(v) for v in platt)

    @classmethod
    def fit(cls, X, y, params: SVMParams = SVMParams(), seed: int = 0, feature_names=None):
        X, y01 = check_training_data(X, y)
        var = X.var()
        gamma = 1.0 / (X.shape[1] * var) if var > 0 else 1.0
        K = kernel_matrix(X, X, params.kernel, gamma, params.degree)
        ys = np.where(y01 == 1, 1.0, -1.0)
        alpha, rho, ok = smo(K, ys, params.c, params.tol, params.max_iter)
        if not ok:
            warnings.warn("SMO reached max_iter before meeting the KKT tolerance", RuntimeWarning)
        sv = alpha > 0
        f = K[:, sv] @ (alpha[sv] * ys[sv]) - rho
        platt = fit_platt(f, y01)
        return cls(X[sv], alpha[sv] * ys[sv], rho, gamma, params.kernel, params.degree, platt, feature_names)

    def decision_function(self, X):
        X = self._check(X)
        return kernel_matrix(X, self.support, self.kernel, self.gamma, self.degree) @ self.coef - self.rho

    def _proba(self, X):
        f = kernel_matrix(X, self.support, self.kernel, self.gamma, self.degree) @ self.coef - self.rho
        a, b = self.platt
        return 1.0 / (1.0 + np.exp(a * f + b))

    def get_params(self):
        return {"support": self.support.tolist(), "coef": self.coef.tolist(), "rho": self.rho,
                "gamma": self.gamma, "kernel": self.kernel, "degree": self.degree, "platt": list(self.platt)}
