"""Classification metrics and fold aggregation. Label 1 (fake) is the positive class."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

METRICS = ("f1_macro", "roc_auc", "auc_pr")
METRIC_TITLES = {"f1_macro": "F1 Macro", "roc_auc": "ROC AUC", "auc_pr": "AUC PR"}


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class EvalResult:
    f1_macro: float
    roc_auc: float
    auc_pr: float
    n_pos: int
    n_neg: int
    threshold: float = 0.5

    def as_dict(self) -> dict:
        return {"f1_macro": self.f1_macro, "roc_auc": self.roc_auc, "auc_pr": self.auc_pr,
                "n_pos": self.n_pos, "n_neg": self.n_neg, "threshold": self.threshold}


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


def f1_macro(labels, probs, threshold: float = 0.5) -> float:
    y = np.asarray(labels).astype(bool)
    if y.size == 0:
        raise UndefinedMetricError("f1_macro needs at least one example")
    pred = np.asarray(probs) >= threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    tn = int(np.sum(~pred & ~y))
    return (_f1(tp, fp, fn) + _f1(tn, fn, fp)) / 2


def roc_auc(labels, scores) -> float:
    """Mann-Whitney form with midranks, so ties count one half."""
    y = np.asarray(labels).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("roc_auc needs both classes")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auc_pr(labels, scores) -> float:
    """Average precision with step interpolation; tied scores form one threshold."""
    y = np.asarray(labels).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("auc_pr needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each group of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    seen = ends + 1
    precision = tp / seen
    recall = tp / n_pos
    steps = np.diff(np.r_[0.0, recall])
    return float(np.sum(steps * precision))


def evaluate(labels, probs, threshold: float = 0.5) -> EvalResult:
    y = np.asarray(labels).astype(int)
    return EvalResult(
        f1_macro=f1_macro(y, probs, threshold),
        roc_auc=roc_auc(y, probs),
        auc_pr=auc_pr(y, probs),
        n_pos=int(y.sum()),
        n_neg=int(len(y) - y.sum()),
        threshold=threshold,
    )


@dataclass(frozen=True)
class FoldAggregate:
    """Per-metric mean and sample std across folds, in percent."""
    mean: dict
    std: dict
    k: int

    def fmt(self, metric: str) -> str:
        return f"{self.mean[metric]:.1f} ± {self.std[metric]:.1f}"


def aggregate_folds(per_fold) -> FoldAggregate:
    per_fold = list(per_fold)
    if len(per_fold) < 2:
        raise ValueError("fold aggregation needs at least two folds")
    mean, std = {}, {}
    for m in METRICS:
        v = np.array([getattr(r, m) for r in per_fold]) * 100
        mean[m] = float(v.mean())
        std[m] = float(v.std(ddof=1))
    return FoldAggregate(mean, std, len(per_fold))
