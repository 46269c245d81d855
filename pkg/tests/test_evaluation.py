import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nactpredict.evaluation import (
    CVPlan,
    Incomparable,
    accuracy,
    auc,
    fit_fold,
    run_experiment,
    stratified_folds,
    wilcoxon_signed_rank,
)
from nactpredict.longitudinal import FeatureTable
from nactpredict.models import ModelConfig
from oracles import enumerate_wilcoxon_p, pair_count_auc


def test_folds_examples():
    y = np.array([0, 1] * 5)
    f = stratified_folds(y, 5, seed=3)
    for k in range(5):
        assert sorted(y[f == k].tolist()) == [0, 1]
    assert np.array_equal(f, stratified_folds(y, 5, seed=3))
    with pytest.raises(ValueError):
        stratified_folds(np.array([0] * 9 + [1] * 3), 5, 0)
    with pytest.raises(ValueError):
        stratified_folds(np.array([0, 1, 0]), 5, 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 0.9))
def test_fold_class_ratio_within_one(seed, prevalence):
    rng = np.random.default_rng(seed)
    y = (rng.random(598) < prevalence).astype(int)
    f = stratified_folds(y, 5, seed)
    sizes = np.bincount(f, minlength=5)
    assert sizes.max() - sizes.min() <= 1
    for k in range(5):
        expected = y.mean() * sizes[k]
        assert abs(y[f == k].sum() - expected) <= 1 + 1e-9


def test_accuracy_and_auc_examples():
    assert accuracy([0, 1, 1], [0, 1, 0]) == pytest.approx(2 / 3)
    assert auc([0, 0, 1, 1], [0.1, 0.2, 0.3, 0.4]) == 1.0
    assert auc([0, 0, 1, 1], [0.5] * 4) == 0.5
    with pytest.raises(ValueError):
        auc([1, 1], [0.2, 0.3])
    with pytest.raises(ValueError):
        accuracy([], [])


def test_auc_random_20_matches_pair_counting():
    rng = np.random.default_rng(0)
    y = np.array([0, 1] * 10)
    s = rng.integers(0, 6, 20).astype(float)
    assert auc(y, s) == pair_count_auc(y.tolist(), s.tolist())


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_auc_complement_for_tie_free_scores(seed):
    rng = np.random.default_rng(seed)
    y = np.array([0, 1] * 8)
    s = rng.permutation(16).astype(float)
    assert auc(y, s) + auc(y, -s) == pytest.approx(1.0, abs=1e-15)


def test_wilcoxon_examples():
    with pytest.raises(Incomparable):
        wilcoxon_signed_rank([1, 2, 3, 4, 5], [1, 2, 3, 4, 5])
    w, p = wilcoxon_signed_rank([2, 3, 4, 5, 6], [1, 1, 1, 1, 1])
    assert w == 0 and p == 2 / 32
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1, 2, 3, 4], [0, 0, 0, 0])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(5, 20))
def test_wilcoxon_exact_matches_recurrence_free_count_and_is_symmetric(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 6, n).astype(float)
    b = rng.integers(0, 6, n).astype(float)
    if np.count_nonzero(a - b) < 5:
        return
    w, p = wilcoxon_signed_rank(a, b)
    w2, p2 = wilcoxon_signed_rank(b, a)
    assert w == w2 and p == p2
    if np.count_nonzero(a - b) <= 12:
        ref_w, ref_p = enumerate_wilcoxon_p(a.tolist(), b.tolist())
        assert w == ref_w and abs(p - ref_p) < 1e-12


def test_wilcoxon_normal_approximation_large_n():
    from scipy.stats import wilcoxon

    rng = np.random.default_rng(5)
    d = np.round(rng.normal(0.3, 1.0, 40), 1)
    w, p = wilcoxon_signed_rank(d, np.zeros(40))
    ref = wilcoxon(d[d != 0], method="approx", correction=True)
    assert w == ref.statistic and abs(p - ref.pvalue) < 1e-12


def _table(X, y, prefix="f"):
    ids = [f"P{i:03d}" for i in range(len(y))]
    return FeatureTable(ids, [f"{prefix}{j}" for j in range(X.shape[1])], X, y)


def test_separable_cohort_lr_accuracy():
    rng = np.random.default_rng(0)
    X = rng.random((100, 6))
    # leave a margin around the threshold so the class boundary is unambiguous
    X[:, 3] = np.where(X[:, 3] > 0.5, 0.6 + 0.4 * X[:, 3], 0.4 * X[:, 3])
    y = (X[:, 3] > 0.5).astype(int)
    rep = run_experiment({"with": _table(X, y), "without": _table(X, y)},
                         CVPlan(seeds=(0, 1)), methods=("chi2",), models=(ModelConfig("lr", {"l2_weight": 1e-4}),))
    s = [r for r in rep.summary() if r["variant"] == "with"][0]
    assert s["accuracy_mean"] >= 0.99


def test_null_cohort_auc_near_half():
    rng = np.random.default_rng(1)
    X = rng.random((120, 8))
    y = np.array([0, 1] * 60)
    rep = run_experiment({"with": _table(X, y), "without": _table(X, y)}, CVPlan(seeds=tuple(range(8))),
                         methods=("chi2",), models=("lr",))
    s = [r for r in rep.summary() if r["variant"] == "with"][0]
    assert 0.4 <= s["auc_mean"] <= 0.6


def test_report_shape_and_aggregates(tmp_path):
    rng = np.random.default_rng(2)
    X = rng.random((60, 6))
    y = (X[:, 0] + 0.5 * rng.random(60) > 0.8).astype(int)
    plan = CVPlan(n_folds=5, seeds=(0, 1, 2), k_grid=(2, 4))
    rep = run_experiment({"with": _table(X, y), "without": _table(X[:, ::-1].copy(), y)}, plan,
                         methods=("chi2", "auto"), models=("lr",))
    for (v, m, k), rows in rep.groups().items():
        assert len(rows) == 15
        s = [r for r in rep.summary() if (r["variant"], r["method"], r["model"]) == (v, m, k)][0]
        acc = np.array([r["accuracy"] for r in rows])
        assert abs(s["accuracy_mean"] - acc.mean()) < 1e-12 and abs(s["accuracy_std"] - acc.std(ddof=1)) < 1e-12
    c = rep.comparison("with", "without", "chi2", "lr", "auc")
    assert c["n"] == 15
    rep.write(tmp_path)
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["format"] == "nactpredict.report" and len(doc["rows"]) == 60
    assert (tmp_path / "report.csv").read_text().count("\n") == 61
    assert "with AUC" in rep.table()


def test_thread_count_does_not_change_report():
    rng = np.random.default_rng(3)
    X = rng.random((50, 5))
    y = (X[:, 1] > 0.6).astype(int)
    tabs = {"with": _table(X, y), "without": _table(X ** 2, y)}
    plan = CVPlan(seeds=(0, 1), k_grid=(2, 3))
    a = run_experiment(tabs, plan, methods=("rf",), models=("lr",), threads=1).to_json()
    b = run_experiment(tabs, plan, methods=("rf",), models=("lr",), threads=3).to_json()
    assert a == b


def test_leakage_sentinel_corrupted_test_labels():
    rng = np.random.default_rng(4)
    X = rng.random((60, 8))
    X[rng.random((60, 8)) < 0.05] = np.nan
    y = (np.nan_to_num(X[:, 0]) > 0.5).astype(int)
    folds = stratified_folds(y, 5, 0)
    tr, te = np.nonzero(folds != 0)[0], np.nonzero(folds == 0)[0]
    names = [f"f{j}" for j in range(8)]
    plan = CVPlan(k_grid=(2, 4))
    for method in ("rfe", "rf", "chi2", "auto"):
        base = fit_fold(X, y, tr, names, method, ModelConfig("lr"), plan, 7).digest()
        y_bad = y.copy()
        y_bad[te] = 1 - y_bad[te]
        X_bad = X.copy()
        X_bad[te] = 1e6
        assert fit_fold(X_bad, y_bad, tr, names, method, ModelConfig("lr"), plan, 7).digest() == base


def test_run_experiment_validation():
    X = np.random.default_rng(5).random((20, 3))
    y = np.array([0, 1] * 10)
    with pytest.raises(ValueError):
        run_experiment({}, CVPlan())
    with pytest.raises(ValueError):
        run_experiment({"with": _table(X, y)}, CVPlan(), methods=("mi",))
    with pytest.raises(ValueError):
        run_experiment({"with": _table(X, y), "without": _table(X, 1 - y)}, CVPlan())
