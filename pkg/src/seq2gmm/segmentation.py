"""Piecewise linear segmentation with greedy breakpoint insertion.

Breakpoints are 1-based sample positions ``b_1 = 1 < b_2 < ... < b_{M+1} = n``.
The fitted curve is ``beta_1 + sum_j beta_{j+1} * max(i - b_j, 0)``: an
intercept plus one hinge per segment start, so the fit is continuous.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataio import Dataset, TimeSeries
from .errors import NumericalError

log = logging.getLogger(__name__)

MIN_SEGMENT = 2
RIDGE = 1e-8


@dataclass(frozen=True)
class SegmentationModel:
    num_segments: int
    breakpoints: tuple[int, ...]
    beta: tuple[float, ...]
    residual_sse: float

    def spans(self) -> list[tuple[int, int]]:
        """0-based half-open sample ranges of each segment."""
        return segment_spans(self.breakpoints)

    def to_dict(self) -> dict:
        return {"M": self.num_segments, "breakpoints": list(self.breakpoints),
                "beta": list(self.beta), "residual_sse": self.residual_sse}

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentationModel":
        return cls(int(d["M"]), tuple(int(b) for b in d["breakpoints"]),
                   tuple(float(b) for b in d["beta"]), float(d["residual_sse"]))


@dataclass(frozen=True)
class Segment:
    series_id: str
    index: int
    values: np.ndarray
    start: int
    stop: int


def _validate_breakpoints(length: int, breakpoints: Sequence[int]) -> np.ndarray:
    b = np.asarray(breakpoints, dtype=np.int64)
    if b.ndim != 1 or b.size < 2:
        raise ValueError("need at least the two end breakpoints")
    if b[0] != 1 or b[-1] != length:
        raise ValueError(f"breakpoints must start at 1 and end at {length}, got {b.tolist()}")
    if np.any(np.diff(b) < MIN_SEGMENT):
        raise ValueError(f"breakpoints {b.tolist()} leave a segment shorter than {MIN_SEGMENT} samples")
    return b


def regression_matrix(length: int, breakpoints: Sequence[int]) -> np.ndarray:
    """Intercept column followed by hinges ``max(i - b_j, 0)`` for j = 1..M."""
    b = _validate_breakpoints(length, breakpoints)
    i = np.arange(1, length + 1, dtype=np.float64)[:, None]
    hinges = np.maximum(i - b[:-1][None, :], 0.0)
    return np.hstack([np.ones((length, 1)), hinges])


def fit_piecewise(series, breakpoints: Sequence[int]) -> tuple[np.ndarray, float]:
    """Least-squares slopes for fixed breakpoints; returns ``(beta, residual_sse)``."""
    s = series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=np.float64)
    A = regression_matrix(s.size, breakpoints)
    beta, _, rank, _ = np.linalg.lstsq(A, s, rcond=None)
    if rank < A.shape[1]:
        gram = A.T @ A + RIDGE * np.eye(A.shape[1])
        try:
            beta = np.linalg.solve(gram, A.T @ s)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular regression matrix for breakpoints {list(breakpoints)}") from exc
    e = A @ beta - s
    return beta, float(e @ e)


def _candidate_sse(s: np.ndarray, base: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """SSE for every candidate extra hinge, via batched QR of the design matrices."""
    n = s.size
    i = np.arange(1, n + 1, dtype=np.float64)
    extra = np.maximum(i[None, :] - candidates[:, None], 0.0)  # (C, n)
    A = np.broadcast_to(base, (candidates.size,) + base.shape)
    A = np.concatenate([A, extra[:, :, None]], axis=2)
    Q, _ = np.linalg.qr(A)
    proj = np.einsum("cnk,n->ck", Q, s)
    resid = s[None, :] - np.einsum("cnk,ck->cn", Q, proj)
    return np.einsum("cn,cn->c", resid, resid)


def _capacity(b: np.ndarray) -> int:
    """How many more breakpoints fit between the sorted breakpoints ``b``."""
    gaps = np.diff(b)
    return int(np.sum(np.maximum(gaps // MIN_SEGMENT - 1, 0)))


def _admissible(n: int, interior: Sequence[int], remaining: int = 0) -> np.ndarray:
    """Positions keeping every segment at least ``MIN_SEGMENT`` long.

    A position is also rejected when, after inserting it, the ``remaining``
    later insertions could no longer be placed.
    """
    b = np.array(sorted([1, n, *interior]))
    cand = np.arange(2, n, dtype=np.int64)
    gaps = np.abs(cand[:, None] - b[None, :]).min(axis=1)
    cand = cand[gaps >= MIN_SEGMENT]
    if remaining:
        cand = np.array([p for p in cand if _capacity(np.sort(np.append(b, p))) >= remaining], dtype=np.int64)
    return cand


def greedy_path(series, max_segments: int) -> list[list[int]]:
    """Breakpoint lists for M = 1..max_segments, each extending the previous one."""
    s = series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=np.float64)
    n = s.size
    if n < MIN_SEGMENT * max_segments + 1:
        raise ValueError(f"series of length {n} is too short for {max_segments} segments")
    interior: list[int] = []
    path = [[1, n]]
    i = np.arange(1, n + 1, dtype=np.float64)
    for step in range(max_segments - 1):
        cand = _admissible(n, interior, remaining=max_segments - 2 - step)
        knots = [1, *sorted(interior)]
        base = np.hstack([np.ones((n, 1)), np.maximum(i[:, None] - np.array(knots, dtype=np.float64)[None, :], 0.0)])
        sse = _candidate_sse(s, base, cand)
        best = sse.min()
        # smallest position among numerically tied candidates
        pick = cand[np.flatnonzero(sse <= best + 1e-12 * (1.0 + best))[0]]
        interior.append(int(pick))
        path.append([1, *sorted(interior), n])
    return path


def optimize_breakpoints(series, num_segments: int) -> SegmentationModel:
    """Greedy insertion of ``num_segments - 1`` breakpoints minimising the residual SSE."""
    if num_segments < 1:
        raise ValueError("num_segments must be positive")
    b = greedy_path(series, num_segments)[-1]
    beta, sse = fit_piecewise(series, b)
    return SegmentationModel(num_segments, tuple(b), tuple(float(x) for x in beta), sse)


def segment_spans(breakpoints: Sequence[int]) -> list[tuple[int, int]]:
    # interior boundary sample belongs to the earlier segment
    b = list(breakpoints)
    spans = [(0, b[1])]
    spans += [(b[j], b[j + 1]) for j in range(1, len(b) - 1)]
    return spans


def split_series(series: TimeSeries, model: SegmentationModel) -> list[Segment]:
    if model.breakpoints[-1] != len(series):
        raise ValueError(f"model covers {model.breakpoints[-1]} samples but series {series.id!r} has {len(series)}")
    return [
        Segment(series.id, j + 1, series.values[a:b], a, b)
        for j, (a, b) in enumerate(model.spans())
    ]


def resample(values: np.ndarray, length: int) -> np.ndarray:
    src = np.linspace(0.0, 1.0, values.size)
    return np.interp(np.linspace(0.0, 1.0, length), src, values)


def calinski_harabasz(points, labels) -> float:
    """Between/within scatter ratio normalised by degrees of freedom."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    labels = np.asarray(labels)
    ids = np.unique(labels)
    n, k = X.shape[0], ids.size
    centre = X.mean(axis=0)
    between = within = 0.0
    for c in ids:
        members = X[labels == c]
        ck = members.mean(axis=0)
        between += members.shape[0] * float(np.sum((ck - centre) ** 2))
        within += float(np.sum((members - ck) ** 2))
    if k < 2 or within == 0.0 or n <= k:
        warnings.warn("Calinski-Harabasz index undefined (single cluster or zero within-cluster scatter)",
                      RuntimeWarning, stacklevel=2)
        return float("inf")
    return (between / (k - 1)) / (within / (n - k))


def first_decrease(scores: dict[int, float], max_segments: int) -> int:
    """Return M-1 for the first M whose score drops below that of M-1, else ``max_segments``."""
    ms = sorted(scores)
    for prev, cur in zip(ms, ms[1:]):
        if scores[cur] < scores[prev]:
            return prev
    return max_segments


def select_num_segments(train: Dataset, max_segments: int = 6, resample_len: int = 16, seed: int = 0,
                        return_scores: bool = False):
    """Shared segment count chosen by K-means + Calinski-Harabasz over pooled segments."""
    from .mixture import kmeans

    if max_segments < 2:
        raise ValueError("max_segments must be at least 2")
    shortest = min(len(s) for s in train.series)
    cap = min(max_segments, (shortest - 1) // MIN_SEGMENT)
    if cap < 2:
        raise ValueError(f"shortest series ({shortest} samples) cannot hold two segments")
    paths = [greedy_path(s, cap) for s in train.series]
    scores: dict[int, float] = {}
    for m in range(2, cap + 1):
        pooled = []
        for s, path in zip(train.series, paths):
            for a, b in segment_spans(path[m - 1]):
                pooled.append(resample(s.values[a:b], resample_len))
        X = np.vstack(pooled)
        labels, _ = kmeans(X, m, seed=seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            scores[m] = calinski_harabasz(X, labels)
        log.debug("M=%d CH=%.4g", m, scores[m])
        if m > 2 and scores[m] < scores[m - 1]:
            break
    chosen = first_decrease(scores, cap)
    return (chosen, scores) if return_scores else chosen


def segment_dataset(dataset: Dataset, num_segments: int) -> dict[str, SegmentationModel]:
    return {s.id: optimize_breakpoints(s, num_segments) for s in dataset.series}
