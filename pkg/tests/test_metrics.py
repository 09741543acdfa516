import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from disinfo_gnn.metrics import (EvalResult, UndefinedMetricError, aggregate_folds, auc_pr, evaluate,
                                 f1_macro, roc_auc)


def pair_count_auc(y, s):
    pos = [v for v, t in zip(s, y) if t]
    neg = [v for v, t in zip(s, y) if not t]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def sweep_ap(y, s):
    """Walk each distinct threshold from high to low and add the recall step times precision."""
    n_pos = sum(y)
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(s), reverse=True):
        chosen = [lab for lab, v in zip(y, s) if v >= t]
        tp = sum(chosen)
        recall = tp / n_pos
        ap += (recall - prev_recall) * tp / len(chosen)
        prev_recall = recall
    return ap


def test_f1_examples():
    assert f1_macro([1, 0, 1, 0], [0.9, 0.1, 0.6, 0.4]) == 1.0
    y = [0] * 9 + [1]
    assert f1_macro(y, [0.1] * 10) == pytest.approx((18 / 19) / 2)
    assert f1_macro(y, [0.1] * 10) == pytest.approx(0.47368, abs=1e-5)
    assert f1_macro([1, 1, 0, 0], [0.2, 0.3, 0.8, 0.9]) == 0.0


def test_threshold_is_inclusive():
    assert f1_macro([1, 0], [0.5, 0.49]) == 1.0


def test_auc_examples():
    assert roc_auc([1, 1, 0, 0], [0.9, 0.8, 0.2, 0.1]) == 1.0
    assert roc_auc([1, 0, 1, 0], [0.3] * 4) == 0.5
    assert roc_auc([1, 0, 1, 0], [0.9, 0.8, 0.4, 0.2]) == 0.75
    assert pair_count_auc([1, 0, 1, 0], [0.9, 0.8, 0.4, 0.2]) == 0.75


def test_ap_examples():
    assert auc_pr([1, 1, 0], [0.9, 0.8, 0.1]) == 1.0
    assert auc_pr([0, 0, 0, 1], [0.9, 0.8, 0.7, 0.1]) == pytest.approx(0.25)
    assert auc_pr([1, 0, 1], [0.9, 0.8, 0.7]) == pytest.approx(1 * 0.5 + (2 / 3) * 0.5)
    assert auc_pr([1, 0, 1], [0.9, 0.8, 0.7]) == pytest.approx(0.8333, abs=1e-4)


def test_tied_group_is_one_threshold():
    # both tied at the top: one step to recall 1/2 at precision 1/2
    assert auc_pr([1, 0, 1], [0.9, 0.9, 0.1]) == pytest.approx(0.5 * 0.5 + 0.5 * (2 / 3))


def test_undefined_metrics():
    with pytest.raises(UndefinedMetricError):
        roc_auc([1, 1], [0.2, 0.3])
    with pytest.raises(UndefinedMetricError):
        auc_pr([0, 0], [0.2, 0.3])
    with pytest.raises(UndefinedMetricError):
        f1_macro([], [])


labelled = st.integers(2, 50).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(lambda y: 0 < sum(y) < n),
    st.lists(st.integers(0, 8).map(lambda k: k / 8), min_size=n, max_size=n)))


@settings(max_examples=150, deadline=None)
@given(labelled)
def test_auc_matches_pair_counting(case):
    y, s = case
    assert roc_auc(y, s) == pytest.approx(pair_count_auc(y, s), abs=1e-12)


@settings(max_examples=150, deadline=None)
@given(labelled)
def test_ap_matches_threshold_sweep(case):
    y, s = case
    assert auc_pr(y, s) == pytest.approx(sweep_ap(y, s), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 50))
def test_negation_and_monotone_invariance(seed, n):
    rng = np.random.default_rng(seed)
    y = np.r_[1, 0, rng.integers(0, 2, n - 2)]
    s = rng.random(n)  # continuous, so ties have probability zero
    assert roc_auc(y, s) + roc_auc(y, -s) == pytest.approx(1.0, abs=1e-12)
    t = np.exp(3 * s) - 2
    assert roc_auc(y, t) == pytest.approx(roc_auc(y, s), abs=1e-12)
    assert auc_pr(y, t) == pytest.approx(auc_pr(y, s), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 40))
def test_f1_class_swap_symmetry(seed, n):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    pred = rng.integers(0, 2, n)
    assert f1_macro(y, pred) == pytest.approx(f1_macro(1 - y, 1 - pred), abs=1e-12)


def _res(v):
    return EvalResult(v, v, v, 1, 1)


def test_aggregate_examples():
    agg = aggregate_folds([_res(0.6), _res(0.8)])
    assert agg.mean["f1_macro"] == pytest.approx(70.0)
    assert agg.std["f1_macro"] == pytest.approx(14.142, abs=1e-3)
    same = aggregate_folds([_res(0.5)] * 4)
    assert same.std["roc_auc"] == 0.0
    assert same.fmt("auc_pr") == "50.0 ± 0.0"


def test_format_matches_table_style():
    agg = aggregate_folds([_res(0.677), _res(0.697)])
    assert agg.fmt("f1_macro") == "68.7 ± 1.4"
    with pytest.raises(ValueError):
        aggregate_folds([_res(0.5)])


def test_evaluate_bundle():
    r = evaluate([1, 0, 1, 0], [0.9, 0.8, 0.4, 0.2])
    assert (r.n_pos, r.n_neg, r.roc_auc) == (2, 2, 0.75)
    assert all(0 <= getattr(r, m) <= 1 for m in ("f1_macro", "roc_auc", "auc_pr"))
