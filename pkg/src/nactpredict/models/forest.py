from __future__ import annotations

from typing import List

import numpy as np

from .base import RFParams, TrainedModel, check_training_data


class Tree:
    """Flat CART tree; leaf nodes have feature == -1 and carry a 0/1 vote."""

    def __init__(self, feature, threshold, left, right, vote):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.vote = np.asarray(vote, dtype=np.int64)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            f = self.feature[node[idx]]
            go_left = X[idx, f] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.vote[self.apply(X)]

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "vote")}


def gini(pos, n):
    p = pos / n
    return 2.0 * p * (1.0 - p)


def best_split(X, y, idx, features, min_leaf):
    """Return (feature, threshold, weighted child impurity) minimising Gini, or None."""
    n = len(idx)
    best = None
    for f in features:
        xs = X[idx, f]
        order = np.argsort(xs, kind="stable")
        xs, ys = xs[order], y[idx][order]
        n_left = np.arange(1, n)
        pos_left = np.cumsum(ys)[:-1]
        pos_right = ys.sum() - pos_left
        n_right = n - n_left
        valid = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        imp = (n_left * gini(pos_left, n_left) + n_right * gini(pos_right, n_right)) / n
        imp = np.where(valid, imp, np.inf)
        k = int(np.argmin(imp))
        if best is None or imp[k] < best[2]:
            best = (int(f), 0.5 * (xs[k] + xs[k + 1]), float(imp[k]))
    return best


def grow_tree(X, y, rng, params: RFParams, importance: np.ndarray) -> Tree:
    n_total, d = X.shape
    m = max(1, int(np.sqrt(d)))
    feature, threshold, left, right, vote = [], [], [], [], []

    def new_node():
        for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (vote, 0)):
            lst.append(v)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(n_total), 0)]
    while stack:
        node, idx, depth = stack.pop()
        n = len(idx)
        pos = int(y[idx].sum())
        # an exact tie votes for class 0
        vote[node] = int(2 * pos > n)
        if depth >= params.max_depth or n < params.min_split or pos == 0 or pos == n:
            continue
        feats = rng.choice(d, size=m, replace=False)
        split = best_split(X, y, idx, feats, params.min_leaf)
        if split is None:
            continue
        f, thr, child_imp = split
        importance[f] += n / n_total * (gini(pos, n) - child_imp)
        mask = X[idx, f] <= thr
        l, r = new_node(), new_node()
        feature[node], threshold[node], left[node], right[node] = f, thr, l, r
        stack.append((r, idx[~mask], depth + 1))
        stack.append((l, idx[mask], depth + 1))
    return Tree(feature, threshold, left, right, vote)


class RandomForest(TrainedModel):
    kind = "rf"

    def __init__(self, trees: List[Tree], importances, feature_names=None):
        super().__init__(feature_names)
        self.trees = trees
        self.importances = np.asarray(importances, dtype=np.float64)

    @classmethod
    def fit(cls, X, y, params: RFParams = RFParams(), seed: int = 0, feature_names=None):
        X, y = check_training_data(X, y)
        n, d = X.shape
        trees, total = [], np.zeros(d)
        for child in np.random.SeedSequence(seed).spawn(params.n_trees):
            rng = np.random.default_rng(child)
            boot = rng.integers(0, n, n)
            imp = np.zeros(d)
            trees.append(grow_tree(X[boot], y[boot], rng, params, imp))
            s = imp.sum()
            if s > 0:
                total += imp / s
        total /= params.n_trees
        if total.sum() > 0:
            total /= total.sum()
        return cls(trees, total, feature_names)

    def _proba(self, X):
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def predict(self, X, feature_names=None):
        # an exact 50/50 vote goes to class 0
        return (self.predict_proba(X, feature_names) > 0.5).astype(int)

    def get_params(self):
        return {"trees": [t.to_dict() for t in self.trees], "importances": self.importances.tolist()}

    @classmethod
    def from_params(cls, params, feature_names=None):
        return cls([Tree(**t) for t in params["trees"]], params["importances"], feature_names)
