"""Cross-validated evaluation: stratified folds, accuracy/AUC, paired Wilcoxon tests, reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
from scipy.special import ndtr

from .longitudinal import FeatureTable
from .models import ModelConfig, TrainedModel, train
from .selection import (
    SELECTION_METHODS,
    PreprocessState,
    SelectionResult,
    apply_preprocess,
    fit_preprocess,
    ranking,
    select_from_ranking,
)

REPORT_FORMAT = "nactpredict.report"
REPORT_VERSION = 1
AUTO = "auto"


class Incomparable(ValueError):
    """All paired differences are zero."""


@dataclass
class CVPlan:
    n_folds: int = 5
    seeds: Tuple[int, ...] = tuple(range(8))
    stratified: bool = True
    k_grid: Tuple[int, ...] = (5, 10, 15, 20)
    inner_folds: int = 5  # one inner fold (20%) is held out for tuning

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.k_grid = tuple(int(k) for k in self.k_grid)
        if self.n_folds < 2 or self.inner_folds < 2:
            raise ValueError("need at least two folds")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if not self.k_grid or min(self.k_grid) < 1:
            raise ValueError("k_grid must hold positive sizes")


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def stratified_folds(y, n_folds: int, seed: int, stratified: bool = True) -> np.ndarray:
    """Fold index per sample; shuffled round-robin within each class."""
    y = np.asarray(y)
    n = len(y)
    if n < n_folds:
        raise ValueError(f"{n} samples cannot fill {n_folds} folds")
    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=np.int64)
    if not stratified:
        folds[rng.permutation(n)] = np.arange(n) % n_folds
        return folds
    start = 0
    for c in np.unique(y):
        idx = np.nonzero(y == c)[0]
        if len(idx) < n_folds:
            raise ValueError(f"class {c} has {len(idx)} members, fewer than {n_folds} folds")
        idx = rng.permutation(idx)
        # continue the round-robin across classes so fold sizes differ by at most one
        folds[idx] = (start + np.arange(len(idx))) % n_folds
        start = (start + len(idx)) % n_folds
    return folds


def accuracy(y_true, y_pred) -> float:
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if len(y_true) == 0 or len(y_true) != len(y_pred):
        raise ValueError("accuracy needs equal-length nonempty inputs")
    return float(np.mean(y_true == y_pred))


def average_ranks(x) -> np.ndarray:
    """1-based ranks with ties sharing their mean rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ranks = np.empty(len(x))
    starts = np.flatnonzero(np.concatenate(([True], xs[1:] != xs[:-1])))
    ends = np.concatenate((starts[1:], [len(x)]))
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + e + 1)
    return ranks


def auc(y_true, scores) -> float:
    """Mann-Whitney U / (n1 n0); tied pairs count one half."""
    y = np.asarray(y_true)
    s = np.asarray(scores, dtype=np.float64)
    pos = y == 1
    n1, n0 = int(pos.sum()), int((~pos).sum())
    if n1 == 0 or n0 == 0:
        raise ValueError("auc needs both classes")
    r = average_ranks(s)
    u = r[pos].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def _exact_lower_tail(ranks2: np.ndarray, w2: int) -> float:
    """P(T <= w) for T = sum of a random signed subset of (doubled, integer) ranks."""
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in ranks2:
        shifted = np.zeros_like(counts)
        shifted[int(r):] = counts[: total + 1 - int(r)]
        counts = counts + shifted
    return float(counts[: w2 + 1].sum() / 2.0 ** len(ranks2))


def wilcoxon_signed_rank(a, b, exact_max_n: int = 20) -> Tuple[float, float]:
    """Two-sided signed-rank test; returns (W = min(W+, W-), p)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    d = a - b
    d = d[d != 0]
    if len(d) == 0:
        raise Incomparable("all paired differences are zero")
    n = len(d)
    if n < 5:
        raise ValueError(f"need at least 5 nonzero differences, got {n}")
    r = average_ranks(np.abs(d))
    w_plus, w_minus = r[d > 0].sum(), r[d < 0].sum()
    w = min(w_plus, w_minus)
    if n <= exact_max_n:
        r2 = np.rint(2 * r).astype(np.int64)
        p = 2.0 * _exact_lower_tail(r2, int(round(2 * w)))
    else:
        _, tie_counts = np.unique(r, return_counts=True)
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
        z = (w - mean + 0.5) / math.sqrt(var)
        p = 2.0 * float(ndtr(min(z, 0.0)))
    return float(w), float(min(1.0, p))


# ---------------------------------------------------------------- fold fitting


@dataclass
class FoldFit:
    preprocess: PreprocessState
    selection: SelectionResult
    model: TrainedModel
    inner: Dict[str, Dict[int, float]]  # method -> k -> inner-validation accuracy

    def digest(self) -> str:
        doc = {"preprocess": self.preprocess.to_dict(), "selection": self.selection.to_dict(),
               "model": self.model.to_dict(), "inner": {m: {str(k): v for k, v in d.items()} for m, d in self.inner.items()}}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _fit_selected(X, y, names, method, k, model_cfg, seed, scores=None):
    state = fit_preprocess(X, names)
    Z = apply_preprocess(state, X)
    if scores is None:
        scores = ranking(method, Z, y, seed)
    sel = select_from_ranking(method, scores, k, names)
    cols = sel.indices(names)
    model = train(model_cfg, Z[:, cols], y, seed, sel.selected)
    return state, sel, model


def fit_fold(X, y, train_idx, names, method: str, model_cfg: ModelConfig, plan: CVPlan, seed: int) -> FoldFit:
    """Fit preprocessing, selection (with inner k choice) and model on training rows only."""
    X = np.asarray(X, dtype=np.float64)[train_idx]
    y = np.asarray(y)[train_idx]
    names = list(names)
    methods = SELECTION_METHODS if method == AUTO else (method,)
    ks = sorted({min(k, len(names)) for k in plan.k_grid})
    inner_folds = stratified_folds(y, plan.inner_folds, derive_seed(seed, 1))
    tr, va = inner_folds != 0, inner_folds == 0
    state = fit_preprocess(X[tr], names)
    Ztr, Zva = apply_preprocess(state, X[tr]), apply_preprocess(state, X[va])
    inner: Dict[str, Dict[int, float]] = {}
    best = None
    for m in methods:
        scores = ranking(m, Ztr, y[tr], seed)
        inner[m] = {}
        for k in ks:
            sel = select_from_ranking(m, scores, k, names)
            cols = sel.indices(names)
            model = train(model_cfg, Ztr[:, cols], y[tr], seed)
            acc = accuracy(y[va], model.predict(Zva[:, cols]))
            inner[m][k] = acc
            # ties keep the earlier method and the smaller k
            if best is None or acc > best[0]:
                best = (acc, m, k)
    _, m, k = best
    state, sel, model = _fit_selected(X, y, names, m, k, model_cfg, seed)
    return FoldFit(state, sel, model, inner)


def evaluate_fold(fit: FoldFit, X, y, test_idx, names) -> Tuple[float, float]:
    X = np.asarray(X, dtype=np.float64)[test_idx]
    y = np.asarray(y)[test_idx]
    Z = apply_preprocess(fit.preprocess, X)[:, fit.selection.indices(names)]
    p = fit.model.predict_proba(Z, fit.selection.selected)
    return accuracy(y, fit.model.predict(Z, fit.selection.selected)), auc(y, p)


# ---------------------------------------------------------------- reports


@dataclass
class EvalReport:
    rows: List[dict]
    plan: CVPlan
    comparisons: List[dict] = field(default_factory=list)

    def groups(self) -> Dict[Tuple[str, str, str], List[dict]]:
        out: Dict[Tuple[str, str, str], List[dict]] = {}
        for r in self.rows:
            out.setdefault((r["variant"], r["method"], r["model"]), []).append(r)
        return out

    def metric(self, variant: str, method: str, model: str, name: str) -> np.ndarray:
        rows = sorted(self.groups()[(variant, method, model)], key=lambda r: (r["seed"], r["fold"]))
        return np.array([r[name] for r in rows])

    def summary(self) -> List[dict]:
        out = []
        for (v, m, k), rows in sorted(self.groups().items()):
            acc = np.array([r["accuracy"] for r in rows])
            a = np.array([r["auc"] for r in rows])
            out.append({"variant": v, "method": m, "model": k, "n": len(rows),
                        "accuracy_mean": float(acc.mean()), "accuracy_std": float(acc.std(ddof=1)) if len(acc) > 1 else 0.0,
                        "auc_mean": float(a.mean()), "auc_std": float(a.std(ddof=1)) if len(a) > 1 else 0.0})
        return out

    def comparison(self, a: str, b: str, method: str, model: str, metric: str = "auc") -> dict:
        for c in self.comparisons:
            if (c["a"], c["b"], c["method"], c["model"], c["metric"]) == (a, b, method, model, metric):
                return c
        raise KeyError((a, b, method, model, metric))

    def to_dict(self) -> dict:
        return {"format": REPORT_FORMAT, "version": REPORT_VERSION, "plan": asdict(self.plan),
                "rows": self.rows, "summary": self.summary(), "comparisons": self.comparisons}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "method", "model", "seed", "fold", "k", "accuracy", "auc"])
        for r in self.rows:
            w.writerow([r["variant"], r["method"], r["model"], r["seed"], r["fold"], r["k"],
                        repr(r["accuracy"]), repr(r["auc"])])
        return buf.getvalue()

    def write(self, out_dir: Union[str, os.PathLike], stem: str = "report") -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, f"{stem}.json"), "w") as fh:
            fh.write(self.to_json())
        with open(os.path.join(out_dir, f"{stem}.csv"), "w") as fh:
            fh.write(self.to_csv())

    def table(self) -> str:
        """Mean ± std per (method, model), one column block per variant."""
        summ = self.summary()
        variants = sorted({s["variant"] for s in summ})
        by = {(s["variant"], s["method"], s["model"]): s for s in summ}
        keys = sorted({(s["method"], s["model"]) for s in summ})
        head = f"{'selection':<10}{'model':<6}" + "".join(f"{v + ' ACC':>18}{v + ' AUC':>18}" for v in variants)
        lines = [head, "-" * len(head)]
        for m, k in keys:
            cells = []
            for v in variants:
                s = by.get((v, m, k))
                if s is None:
                    cells.append(f"{'-':>18}{'-':>18}")
                else:
                    cells.append(f"{s['accuracy_mean']:>11.2f} ±{s['accuracy_std']:.2f}{s['auc_mean']:>11.2f} ±{s['auc_std']:.2f}")
            lines.append(f"{m:<10}{k:<6}" + "".join(cells))
        for c in self.comparisons:
            p = "n/a" if c["p"] is None else f"{c['p']:.4g}"
            flag = " *" if c["significant"] else ""
            lines.append(f"{c['a']} vs {c['b']} [{c['method']}/{c['model']}] {c['metric']}: p = {p}{flag}")
        return "\n".join(lines)


def _compare(report: EvalReport, pairs, alpha=0.05) -> List[dict]:
    out = []
    groups = report.groups()
    for a, b in pairs:
        for (v, m, k) in sorted(groups):
            if v != a or (b, m, k) not in groups:
                continue
            for metric in ("accuracy", "auc"):
                xa = report.metric(a, m, k, metric)
                xb = report.metric(b, m, k, metric)
                try:
                    stat, p = wilcoxon_signed_rank(xa, xb)
                except ValueError:
                    stat, p = None, None
                out.append({"a": a, "b": b, "method": m, "model": k, "metric": metric, "n": len(xa),
                            "mean_difference": float(np.mean(xa - xb)), "statistic": stat, "p": p,
                            "significant": p is not None and p < alpha})
    return out


def run_experiment(tables: Mapping[str, FeatureTable], plan: CVPlan = CVPlan(),
                   methods: Sequence[str] = SELECTION_METHODS, models: Sequence[Union[str, ModelConfig]] = ("lr",),
                   pairs: Sequence[Tuple[str, str]] = (("with", "without"),), threads: int = 1,
                   alpha: float = 0.05) -> EvalReport:
    """Cross-validate every (variant, selection method, model) on shared folds."""
    if not tables:
        raise ValueError("no feature tables given")
    models = [m if isinstance(m, ModelConfig) else ModelConfig(m) for m in models]
    for m in methods:
        if m not in SELECTION_METHODS and m != AUTO:
            raise ValueError(f"unknown selection method {m!r}")
    ref = next(iter(tables.values()))
    for name, t in tables.items():
        if list(t.ids) != list(ref.ids) or not np.array_equal(t.y, ref.y):
            raise ValueError(f"table {name!r} does not share patients and labels with the others")
    for a, b in pairs:
        if a not in tables or b not in tables:
            raise ValueError(f"comparison pair ({a}, {b}) names an unknown variant")
    y = np.asarray(ref.y)

    jobs = []
    for seed in plan.seeds:
        folds = stratified_folds(y, plan.n_folds, seed, plan.stratified)
        for f in range(plan.n_folds):
            jobs.append((seed, f, np.nonzero(folds != f)[0], np.nonzero(folds == f)[0]))

    def run(job):
        seed, f, tr, te = job
        rows = []
        for variant in sorted(tables):
            t = tables[variant]
            for method in methods:
                for mc in models:
                    fit = fit_fold(t.X, y, tr, t.names, method, mc, plan, derive_seed(seed, f))
                    acc, a = evaluate_fold(fit, t.X, y, te, t.names)
                    rows.append({"variant": variant, "method": method, "model": mc.kind, "seed": seed, "fold": f,
                                 "k": fit.selection.k, "selection_method": fit.selection.method,
                                 "selected": fit.selection.selected, "accuracy": acc, "auc": a})
        return rows

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            chunks = list(pool.map(run, jobs))
    else:
        chunks = [run(j) for j in jobs]
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=lambda r: (r["variant"], r["method"], r["model"], r["seed"], r["fold"]))
    report = EvalReport(rows, plan)
    report.comparisons = _compare(report, pairs, alpha)
    return report
