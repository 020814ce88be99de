"""Accuracy, AUROC, AUPRC and max-F1 with exact tie handling.

Every threshold rule is ``score >= tau``. Tied scores form a single
threshold block, so the metrics do not depend on input order.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def _check(scores, labels, need_pos=True, need_neg=False):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if s.size == 0:
        raise ValueError("empty input")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    y = y.astype(np.int64)
    if need_pos and not y.any():
        raise ValueError("metric needs at least one positive example")
    if need_neg and y.all():
        raise ValueError("metric needs at least one negative example")
    return s, y


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    s, y = _check(scores, labels, need_pos=False)
    return float(np.mean((s >= threshold).astype(np.int64) == y))


def auroc(scores, labels) -> float:
    """Tie-corrected Mann-Whitney concordance, equal to the trapezoidal ROC area."""
    s, y = _check(scores, labels, need_pos=True, need_neg=True)
    ranks = rankdata(s)  # average ranks give the half credit for ties
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _threshold_blocks(s, y):
    """Cumulative (true positives, predicted positives) at each distinct score, descending."""
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    last = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tp = np.cumsum(y_sorted)[last]
    pp = np.flatnonzero(last) + 1
    return tp, pp


def auprc(scores, labels) -> float:
    """Average precision: sum over threshold blocks of recall gain times precision."""
    s, y = _check(scores, labels)
    tp, pp = _threshold_blocks(s, y)
    n_pos = y.sum()
    recall_gain = np.diff(np.r_[0, tp]) / n_pos
    return float(np.sum(recall_gain * (tp / pp)))


def max_f1(scores, labels) -> float:
    s, y = _check(scores, labels)
    tp, pp = _threshold_blocks(s, y)
    # F1 = 2PR/(P+R) = 2tp/(pp + n_pos)
    f1 = 2.0 * tp / (pp + y.sum())
    return float(f1.max())


def evaluate_scores(scores, labels, threshold: float = 0.5) -> dict:
    return {
        "accuracy": accuracy(scores, labels, threshold),
        "auroc": auroc(scores, labels),
        "auprc": auprc(scores, labels),
        "max_f1": max_f1(scores, labels),
    }
