"""Paired Wilcoxon signed-rank tests with Holm step-down correction."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, rankdata

from .metrics import METRIC_TITLES, METRICS

EXACT_MAX_N = 20
SIGNIFICANCE = 0.05


@dataclass(frozen=True)
class WilcoxonResult:
    p: float
    w_plus: float
    w_minus: float
    n: int  # nonzero differences
    method: str  # "exact", "normal" or "degenerate"

    @property
    def degenerate(self) -> bool:
        return self.method == "degenerate"


def signed_ranks(a, b):
    """Midranks of |a - b| over the nonzero differences, and their signs."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    d = d[d != 0]
    return rankdata(np.abs(d)), np.sign(d)


def _exact_lower_tail(doubled: np.ndarray, stat: int) -> float:
    # distribution of the positive rank sum (in doubled-rank units) over all 2^n sign vectors
    total = int(doubled.sum())
    counts = [0] * (total + 1)
    counts[0] = 1
    reach = 0
    for r in doubled.tolist():
        for s in range(reach, -1, -1):
            if counts[s]:
                counts[s + r] += counts[s]
        reach += r
    return sum(counts[: stat + 1]) / 2 ** len(doubled)


def wilcoxon_signed_rank(a, b) -> WilcoxonResult:
    """Two-sided signed-rank test on paired samples; zero differences are dropped."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-d and of equal length")
    ranks, signs = signed_ranks(a, b)
    n = len(ranks)
    if n == 0:
        return WilcoxonResult(1.0, 0.0, 0.0, 0, "degenerate")
    w_plus = float(ranks[signs > 0].sum())
    w_minus = float(ranks[signs < 0].sum())
    w = min(w_plus, w_minus)
    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        p = min(1.0, 2 * _exact_lower_tail(doubled, int(round(2 * w))))
        return WilcoxonResult(p, w_plus, w_minus, n, "exact")
    mean = n * (n + 1) / 4
    _, ties = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - np.sum(ties ** 3 - ties) / 48
    if var <= 0:
        return WilcoxonResult(1.0, w_plus, w_minus, n, "degenerate")
    z = (w - mean + 0.5) / np.sqrt(var)
    p = min(1.0, 2 * float(norm.cdf(z)))
    return WilcoxonResult(p, w_plus, w_minus, n, "normal")


def holm_adjust(pvalues) -> list[float]:
    p = np.asarray(pvalues, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = len(p)
    order = np.argsort(p, kind="stable")
    scaled = np.minimum(1.0, (m - np.arange(m)) * p[order])
    out = np.empty(m)
    out[order] = np.maximum.accumulate(scaled)
    return out.tolist()


@dataclass
class PValueTable:
    axis: str
    metric: str
    comparisons: list[str]
    raw: list[float]
    adjusted: list[float]
    n_pairs: list[int]
    degenerate: list[bool]

    @property
    def significant(self) -> list[bool]:
        return [p < SIGNIFICANCE for p in self.adjusted]

    @property
    def significant_raw(self) -> list[bool]:
        return [p < SIGNIFICANCE for p in self.raw]


class FoldAlignmentError(ValueError):
    pass


def axis_label(axis: str, value) -> str:
    if axis in ("profiles", "retweets"):
        return "Present" if value else "Absent"
    if axis == "alpha":
        return f"{value:g}"
    return str(value)


def pairwise_table(rows, axis: str, metric: str) -> PValueTable:
    """Compare every pair of levels of ``axis`` over fold-aligned configurations.

    ``rows`` are result rows exposing ``axes()`` (dict of axis values),
    ``metric_values(metric)`` (per-fold list) and ``fold_hash``. For each pair of
    levels, rows agreeing on all other axes are paired fold by fold and pooled.
    """
    rows = list(rows)
    levels = sorted({r.axes()[axis] for r in rows})
    index = {}
    for r in rows:
        ax = r.axes()
        rest = tuple(sorted((k, v) for k, v in ax.items() if k != axis))
        index[(ax[axis], rest)] = r
    comps, raw, npairs, degen = [], [], [], []
    for va, vb in itertools.combinations(levels, 2):
        xa, xb = [], []
        for (lv, rest), ra in sorted(index.items(), key=lambda kv: repr(kv[0])):
            if lv != va or (vb, rest) not in index:
                continue
            rb = index[(vb, rest)]
            fa, fb = ra.metric_values(metric), rb.metric_values(metric)
            if ra.fold_hash != rb.fold_hash or len(fa) != len(fb):
                raise FoldAlignmentError(
                    f"{axis}={va} and {axis}={vb} were not evaluated on the same folds ({rest})")
            xa.extend(fa)
            xb.extend(fb)
        res = wilcoxon_signed_rank(xa, xb)
        comps.append(f"{axis_label(axis, va)} vs {axis_label(axis, vb)}")
        raw.append(res.p)
        npairs.append(len(xa))
        degen.append(res.degenerate)
    return PValueTable(axis, metric, comps, raw, holm_adjust(raw) if raw else [], npairs, degen)


def pairwise_tables(rows, axis: str, metrics=METRICS) -> dict[str, PValueTable]:
    rows = list(rows)
    return {m: pairwise_table(rows, axis, m) for m in metrics}


def pvalues_csv(tables: dict[str, PValueTable]) -> str:
    metrics = list(tables)
    first = tables[metrics[0]]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([first.axis]
               + [METRIC_TITLES.get(m, m) for m in metrics]
               + [f"{METRIC_TITLES.get(m, m)} (Holm)" for m in metrics]
               + ["n_pairs"])
    for i, comp in enumerate(first.comparisons):
        w.writerow([comp]
                   + [f"{tables[m].raw[i]:.6g}" for m in metrics]
                   + [f"{tables[m].adjusted[i]:.6g}" for m in metrics]
                   + [first.n_pairs[i]])
    return buf.getvalue()


def fmt_p(p: float) -> str:
    return "<0.001" if p < 0.001 else f"{p:.3f}"
