"""Ranking metrics with Anomaly as the positive class."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .dataio import ANOMALY, NORMAL
from .errors import MetricError


def _prepare(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    labels = list(labels)
    if s.size != len(labels):
        raise MetricError(f"{s.size} scores but {len(labels)} labels")
    unknown = {lab for lab in labels if lab not in (NORMAL, ANOMALY)}
    if unknown:
        raise MetricError(f"labels must be {NORMAL!r} or {ANOMALY!r}, got {sorted(map(str, unknown))}")
    if not np.all(np.isfinite(s)):
        raise MetricError("scores must be finite")
    positive = np.array([lab == ANOMALY for lab in labels], dtype=bool)
    if positive.all() or not positive.any():
        raise MetricError("both Normal and Anomaly labels are required")
    return s, positive


def auc(scores: Sequence[float], labels: Sequence[str]) -> float:
    """Probability that a random anomaly outscores a random normal series.

    Ties count one half, which is the Mann-Whitney U statistic divided by
    the number of (anomaly, normal) pairs.
    """
    s, pos = _prepare(scores, labels)
    n_pos = int(pos.sum())
    n_neg = s.size - n_pos
    ranks = rankdata(s)  # average ranks resolve ties as 1/2
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def aupr(scores: Sequence[float], labels: Sequence[str]) -> float:
    """Step-wise area under the precision-recall curve (average precision).

    Thresholds are the distinct scores in decreasing order. Each threshold
    contributes its precision times the recall it adds, so tied scores
    enter together.
    """
    s, pos = _prepare(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    tp = np.cumsum(pos[order])
    # last index of every run of equal scores
    last = np.r_[np.nonzero(np.diff(s_sorted))[0], s.size - 1]
    tp_at = tp[last].astype(np.float64)
    precision = tp_at / (last + 1)
    recall = tp_at / pos.sum()
    gained = np.diff(np.r_[0.0, recall])
    return float(np.sum(precision * gained))


def summarize(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise MetricError("no values to summarise")
    sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return float(v.mean()), sd
