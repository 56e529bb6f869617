"""Segment energies, series scores, anomaly-shapelet localisation, latent export."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import neuralnet as nn
from .dataio import Dataset, TimeSeries
from .mixture import sample_energies
from .segmentation import SegmentationModel, optimize_breakpoints, split_series
from .trainer import TrainedModel


@dataclass
class Shapelet:
    segment_index: int
    span: tuple[int, int]  # 0-based, half-open
    score: float

    def to_dict(self) -> dict:
        return {"segment_index": self.segment_index, "span": list(self.span), "score": self.score}


@dataclass
class ScoreReport:
    series_id: str
    segment_scores: list[float]
    series_score: float
    shapelets: list[Shapelet] = field(default_factory=list)
    label: str | None = None
    breakpoints: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "series_id": self.series_id,
            "label": self.label,
            "series_score": self.series_score,
            "segment_scores": self.segment_scores,
            "breakpoints": self.breakpoints,
            "shapelets": [s.to_dict() for s in self.shapelets],
        }


def _segmentation(series: TimeSeries, model: TrainedModel) -> SegmentationModel:
    return optimize_breakpoints(series, model.num_segments)


def score_segments(series: TimeSeries, model: TrainedModel, segmentation: SegmentationModel | None = None) -> np.ndarray:
    """Energy of each segment of ``series`` under the frozen mixture."""
    seg = segmentation or _segmentation(series, model)
    pieces = [p.values for p in split_series(series, seg)]
    y, _ = nn.latent_batch(pieces, model.net)
    return sample_energies(y, model.gmm)


def score_series(segment_scores: Sequence[float], aggregation: str = "max") -> float:
    scores = np.asarray(segment_scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("no segment scores to aggregate")
    if aggregation == "max":
        return float(scores.max())
    if aggregation == "mean":
        return float(scores.mean())
    raise ValueError(f"unknown aggregation {aggregation!r}")


def select_shapelets(segment_scores: Sequence[float], spans: Sequence[tuple[int, int]], threshold: float) -> list[Shapelet]:
    out = [Shapelet(j + 1, tuple(spans[j]), float(e)) for j, e in enumerate(segment_scores) if e > threshold]
    return sorted(out, key=lambda s: (-s.score, s.segment_index))


def localize_shapelets(series: TimeSeries, model: TrainedModel, quantile_threshold: float = 0.95,
                       segment_scores: Sequence[float] | None = None,
                       segmentation: SegmentationModel | None = None) -> list[Shapelet]:
    """Segments whose energy exceeds the given quantile of training-segment energies."""
    if not 0.0 < quantile_threshold < 1.0:
        raise ValueError("quantile_threshold must lie in (0, 1)")
    seg = segmentation or _segmentation(series, model)
    if segment_scores is None:
        segment_scores = score_segments(series, model, seg)
    return select_shapelets(segment_scores, seg.spans(), model.threshold(quantile_threshold))


def score_dataset(dataset: Dataset, model: TrainedModel, aggregation: str = "max",
                  quantile_threshold: float | None = None) -> list[ScoreReport]:
    q = model.config.quantile if quantile_threshold is None else quantile_threshold
    threshold = model.threshold(q)
    segs = [_segmentation(s, model) for s in dataset.series]
    pieces, owner = [], []
    for i, (s, seg) in enumerate(zip(dataset.series, segs)):
        for p in split_series(s, seg):
            pieces.append(p.values)
            owner.append(i)
    y, _ = nn.latent_batch(pieces, model.net)
    energies = sample_energies(y, model.gmm)
    owner = np.asarray(owner)
    reports = []
    for i, (s, seg) in enumerate(zip(dataset.series, segs)):
        e = energies[owner == i]
        reports.append(ScoreReport(
            series_id=s.id,
            segment_scores=e.tolist(),
            series_score=score_series(e, aggregation),
            shapelets=select_shapelets(e, seg.spans(), threshold),
            label=s.label,
            breakpoints=list(seg.breakpoints),
        ))
    return reports


# ----------------------------------------------------------------------
# latent export


@dataclass
class LatentRow:
    series_id: str
    segment_index: int
    label: str | None
    y: np.ndarray
    y2d: np.ndarray
    energy: float


def principal_projection(Y: np.ndarray, n_components: int = 2) -> np.ndarray:
    """Project centred rows onto the top principal axes of their own covariance."""
    centred = Y - Y.mean(axis=0)
    cov = centred.T @ centred / max(Y.shape[0] - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:n_components]
    axes = vecs[:, order]
    # deterministic orientation
    signs = np.sign(axes[np.argmax(np.abs(axes), axis=0), np.arange(axes.shape[1])])
    signs[signs == 0] = 1.0
    return centred @ (axes * signs)


def export_latent(dataset: Dataset, model: TrainedModel) -> list[LatentRow]:
    ids, idx, labels, pieces = [], [], [], []
    for s in dataset.series:
        for p in split_series(s, _segmentation(s, model)):
            ids.append(s.id)
            idx.append(p.index)
            labels.append(s.label)
            pieces.append(p.values)
    Y, _ = nn.latent_batch(pieces, model.net)
    energies = sample_energies(Y, model.gmm)
    Y2 = principal_projection(Y, 2)
    return [LatentRow(ids[i], idx[i], labels[i], Y[i], Y2[i], float(energies[i])) for i in range(len(ids))]


def write_latent_csv(rows: Iterable[LatentRow], path: str | Path) -> None:
    rows = list(rows)
    dim = rows[0].y.size if rows else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series_id", "segment_index", "label", *[f"y{i}" for i in range(dim)], "pc1", "pc2", "energy"])
        for r in rows:
            w.writerow([r.series_id, r.segment_index, r.label or "", *map(repr, r.y.tolist()),
                        repr(float(r.y2d[0])), repr(float(r.y2d[1])), repr(r.energy)])


def write_reports_jsonl(reports: Iterable[ScoreReport], path: str | Path) -> None:
    with open(path, "w") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_dict()) + "\n")


def write_reports_csv(reports: Iterable[ScoreReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series_id", "score", "label"])
        for r in reports:
            w.writerow([r.series_id, repr(r.series_score), r.label or ""])
