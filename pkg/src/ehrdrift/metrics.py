"""Evaluation statistics: AUROC, average precision, standard error and the
Wilcoxon signed-rank test used to compare paired repeats."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EXACT_MAX_N = 25


class MetricError(ValueError):
    """Raised when a metric or test is undefined for its input."""


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    n_effective: int
    method: str  # "exact" | "normal-approximation"

    __test__ = False  # keep pytest from collecting this


def _as_binary(labels) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1:
        raise MetricError("labels must be one-dimensional")
    if not np.all((y == 0) | (y == 1)):
        raise MetricError("labels must be binary 0/1")
    return y.astype(bool)


def midranks(values) -> np.ndarray:
    """1-based ranks with ties assigned the average of the ranks they span."""
    v = np.asarray(values, dtype=float)
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    # boundaries of equal-value runs
    starts = np.flatnonzero(np.r_[True, sv[1:] != sv[:-1]])
    ends = np.r_[starts[1:], sv.size]
    run_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(v.size)
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


def auroc(scores, labels) -> float:
    """Area under the ROC curve via the midrank Mann-Whitney statistic.

    Ties between a positive and a negative score count one half.
    """
    s = np.asarray(scores, dtype=float)
    y = _as_binary(labels)
    if s.shape != y.shape:
        raise MetricError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC is undefined with a single class")
    r = midranks(s)
    u = r[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Average precision with tied scores handled as one retrieval group.

    Every positive inside a tied group receives the precision measured at
    the end of the group.
    """
    s = np.asarray(scores, dtype=float)
    y = _as_binary(labels)
    if s.shape != y.shape:
        raise MetricError("scores and labels differ in length")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricError("average precision is undefined without positives")
    order = np.argsort(-s, kind="mergesort")
    ss, yy = s[order], y[order]
    group_end = np.flatnonzero(np.r_[ss[1:] != ss[:-1], True])
    tp = np.cumsum(yy)[group_end]
    depth = group_end + 1
    pos_in_group = np.diff(np.r_[0, tp])
    return float(np.sum(pos_in_group * tp / depth) / n_pos)


def standard_error(values) -> float:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise MetricError("standard error needs at least two values")
    # shifting by a member is exact for constant input, so its SE is exactly 0
    return float(np.std(v - v[0], ddof=1) / math.sqrt(v.size))


def _null_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """Number of sign assignments giving each value of 2*W+.

    Subset-sum counting over integer (doubled) midranks; equivalent to
    enumerating all 2**n assignments.
    """
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks.astype(np.int64):
        counts[r:] = counts[r:] + counts[: total + 1 - r]
    return counts


def wilcoxon_signed_rank(a, b, two_sided: bool = True, method: str = "auto") -> TestResult:
    """Wilcoxon signed-rank test on paired samples ``a`` and ``b``.

    Zero differences are dropped; remaining absolute differences get
    midranks. The statistic is ``min(W+, W-)``. ``method`` is ``"auto"``
    (exact up to 25 nonzero pairs), ``"exact"`` or ``"normal"``.

    With ``two_sided=False`` the alternative is ``a > b`` and the p-value is
    ``P(W- <= observed W-)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 1:
        raise MetricError("paired samples must be one-dimensional, equal length and non-empty")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise MetricError("no nonzero pairs")
    ranks = midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    # one-sided (a > b) is evidenced by a small W-
    tail_stat = w if two_sided else w_minus

    if method == "auto":
        method = "exact" if n <= EXACT_MAX_N else "normal"
    if method == "exact":
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = _null_counts(doubled)
        cut = int(round(2 * tail_stat))
        tail = counts[: cut + 1].sum() / 2.0**n
        p = 2 * tail if two_sided else tail
        label = "exact"
    elif method == "normal":
        mean = n * (n + 1) / 4.0
        _, tie_sizes = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_sizes**3 - tie_sizes) / 48.0
        if var <= 0:
            p = 1.0
        else:
            # continuity-corrected lower tail
            z = (tail_stat - mean + 0.5) / math.sqrt(var)
            tail = 0.5 * math.erfc(-z / math.sqrt(2))
            p = 2 * tail if two_sided else tail
        label = "normal-approximation"
    else:
        raise ValueError(f"unknown method {method!r}")
    return TestResult(statistic=w, p_value=float(min(1.0, p)), n_effective=n, method=label)
