"""Datasets: UCR loading, benchmark splits, synthetic signals, augmentation."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ParseError

NORMAL = "Normal"
ANOMALY = "Anomaly"
MIN_LENGTH = 4
ANOMALY_SHAPES = ("bump", "step")


@dataclass(frozen=True)
class TimeSeries:
    id: str
    values: np.ndarray
    label: str | None = None
    source_class: int | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if values.ndim != 1:
            raise ValueError(f"series {self.id!r} must be one-dimensional")
        if values.size < MIN_LENGTH:
            raise ValueError(f"series {self.id!r} has {values.size} samples, need at least {MIN_LENGTH}")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"series {self.id!r} contains non-finite samples")
        if self.label not in (None, NORMAL, ANOMALY):
            raise ValueError(f"unknown label {self.label!r}")

    def __len__(self):
        return self.values.size

    @property
    def is_anomaly(self) -> bool:
        return self.label == ANOMALY


@dataclass
class Dataset:
    name: str
    series: list[TimeSeries]
    normal_class: int | None = None

    def __post_init__(self):
        ids = [s.id for s in self.series]
        if len(set(ids)) != len(ids):
            dup = next(i for i, c in Counter(ids).items() if c > 1)
            raise ValueError(f"duplicate series id {dup!r} in dataset {self.name!r}")

    def __len__(self):
        return len(self.series)

    def __iter__(self):
        return iter(self.series)

    @property
    def labels(self) -> list[str | None]:
        return [s.label for s in self.series]

    def normals(self) -> list[TimeSeries]:
        return [s for s in self.series if s.label == NORMAL]

    def anomalies(self) -> list[TimeSeries]:
        return [s for s in self.series if s.label == ANOMALY]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "normal_class": self.normal_class,
            "series": [
                {"id": s.id, "label": s.label, "source_class": s.source_class, "values": s.values.tolist()}
                for s in self.series
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Dataset":
        series = [
            TimeSeries(d["id"], np.asarray(d["values"], dtype=np.float64), d.get("label"), d.get("source_class"))
            for d in doc["series"]
        ]
        return cls(doc.get("name", "dataset"), series, doc.get("normal_class"))

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load_json(cls, path: str | Path) -> "Dataset":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class SynthConfig:
    period_length: int = 100
    num_normal: int = 60
    num_anomalous: int = 10
    max_shift: int = 20
    anomaly_span: tuple[int, int] = (50, 25)
    anomaly_amplitude: float = 2.0
    seed: int = 0
    anomaly_shape: str = "bump"

    def __post_init__(self):
        if self.period_length < MIN_LENGTH or self.num_normal < 1 or self.num_anomalous < 0:
            raise ConfigError("invalid synthetic dataset sizes")
        if not 0 <= self.max_shift < self.period_length:
            raise ConfigError("max_shift must lie in [0, period_length)")
        offset, length = self.anomaly_span
        if offset < 0 or length < 1 or offset + length > self.period_length:
            raise ConfigError("anomaly span must lie inside the period")
        if self.anomaly_shape not in ANOMALY_SHAPES:
            raise ConfigError(f"anomaly_shape must be one of {ANOMALY_SHAPES}")


# ----------------------------------------------------------------------
# UCR archive files


def _split_row(line: str) -> list[str]:
    if "\t" in line:
        fields = line.split("\t")
    elif "," in line:
        fields = line.split(",")
    else:
        fields = line.split()
    while fields and not fields[-1].strip():
        fields.pop()
    return [f.strip() for f in fields]


def read_ucr_rows(path: str | Path) -> list[tuple[int, np.ndarray]]:
    """Parse a label-first delimited file into ``(class, values)`` rows."""
    path = Path(path)
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = _split_row(line.rstrip("\r\n"))
            if not fields:
                raise ParseError("empty row", line=lineno, path=str(path))
            try:
                label = float(fields[0])
                values = np.array([float(x) for x in fields[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"non-numeric field ({exc})", line=lineno, path=str(path)) from None
            if label != int(label):
                raise ParseError(f"class label {fields[0]!r} is not an integer", line=lineno, path=str(path))
            if values.size == 0:
                raise ParseError("row has no samples", line=lineno, path=str(path))
            rows.append((int(label), values))
    if not rows:
        raise ParseError("file contains no rows", path=str(path))
    return rows


def major_class(path: str | Path) -> int:
    """Most frequent class in a UCR file (ties resolved by smallest id)."""
    counts = Counter(c for c, _ in read_ucr_rows(path))
    return min(counts, key=lambda c: (-counts[c], c))


def znormalize(series: TimeSeries) -> TimeSeries:
    """Zero mean, unit population standard deviation; constant series become zeros."""
    v = series.values
    sd = v.std()
    out = np.zeros_like(v) if sd == 0 else (v - v.mean()) / sd
    return replace(series, values=out)


def load_ucr_dataset(path: str | Path, normal_class: int | None = None, normalize: bool = True,
                     name: str | None = None) -> Dataset:
    """Load a UCR file; rows of ``normal_class`` become Normal, all others Anomaly."""
    path = Path(path)
    rows = read_ucr_rows(path)
    classes = {c for c, _ in rows}
    if normal_class is None:
        counts = Counter(c for c, _ in rows)
        normal_class = min(counts, key=lambda c: (-counts[c], c))
    if normal_class not in classes:
        raise ConfigError(f"normal class {normal_class} not present in {path} (classes {sorted(classes)})")
    stem = name or path.stem
    series = []
    for i, (cls, values) in enumerate(rows):
        ts = TimeSeries(f"{stem}-{i}", values, NORMAL if cls == normal_class else ANOMALY, cls)
        series.append(znormalize(ts) if normalize else ts)
    return Dataset(stem, series, normal_class)


def build_benchmark(dataset: Dataset, anomaly_count: int, seed: int) -> tuple[Dataset, Dataset]:
    """Train = every Normal plus ``anomaly_count`` random anomalies; test = the rest."""
    anomalies = dataset.anomalies()
    if anomaly_count < 0 or anomaly_count > len(anomalies):
        raise ValueError(f"anomaly_count={anomaly_count} but only {len(anomalies)} anomalies are available")
    rng = np.random.default_rng(seed)
    picked = set(rng.choice(len(anomalies), size=anomaly_count, replace=False).tolist())
    injected = {anomalies[i].id for i in picked}
    train = [s for s in dataset.series if s.label == NORMAL or s.id in injected]
    test = [s for s in dataset.series if s.label != NORMAL and s.id not in injected]
    return (
        Dataset(f"{dataset.name}-train", train, dataset.normal_class),
        Dataset(f"{dataset.name}-test", test, dataset.normal_class),
    )


def holdout_split(dataset: Dataset, fraction: float, seed: int, label: str = NORMAL) -> tuple[Dataset, Dataset]:
    """Move a random ``fraction`` of the series carrying ``label`` into a second dataset."""
    pool = [s for s in dataset.series if s.label == label]
    n_out = int(round(fraction * len(pool)))
    rng = np.random.default_rng(seed)
    out_ids = {pool[i].id for i in rng.choice(len(pool), size=n_out, replace=False)}
    keep = [s for s in dataset.series if s.id not in out_ids]
    held = [s for s in dataset.series if s.id in out_ids]
    return (Dataset(dataset.name, keep, dataset.normal_class),
            Dataset(f"{dataset.name}-holdout", held, dataset.normal_class))


def merge(name: str, parts: Iterable[Dataset]) -> Dataset:
    parts = list(parts)
    series = [s for p in parts for s in p.series]
    normal_class = next((p.normal_class for p in parts if p.normal_class is not None), None)
    return Dataset(name, series, normal_class)


# ----------------------------------------------------------------------
# synthetic quasi-periodic data


def base_period(period_length: int) -> np.ndarray:
    return np.sin(2.0 * np.pi * np.arange(period_length) / period_length)


def cyclic_shift(values: np.ndarray, shift: int) -> np.ndarray:
    return np.roll(values, shift)


def anomaly_profile(length: int, amplitude: float, shape: str = "bump") -> np.ndarray:
    """Additive anomaly over ``length`` samples.

    ``"step"`` is a constant level offset. ``"bump"`` is a raised-cosine
    window peaking at ``amplitude``, nonzero on every sample of the span.
    """
    if shape == "step":
        return np.full(length, float(amplitude))
    if shape == "bump":
        return amplitude * np.sin(np.pi * (np.arange(length) + 0.5) / length) ** 2
    raise ValueError(f"unknown anomaly shape {shape!r}")


def inject_anomaly(values: np.ndarray, span: tuple[int, int], amplitude: float, shape: str = "step") -> np.ndarray:
    offset, length = span
    out = np.array(values, dtype=np.float64, copy=True)
    out[offset : offset + length] += anomaly_profile(length, amplitude, shape)
    return out


def synthesize_dataset(config: SynthConfig, normalize: bool = False) -> Dataset:
    """Cyclically shifted sine periods; anomalies add a bump or step over ``anomaly_span``.

    The anomaly span is in series coordinates (applied after the shift), so
    every anomalous series carries its injected samples at the same indices.
    """
    rng = np.random.default_rng(config.seed)
    base = base_period(config.period_length)
    series = []
    total = config.num_normal + config.num_anomalous
    shifts = rng.integers(0, config.max_shift + 1, size=total)
    for i in range(total):
        values = cyclic_shift(base, int(shifts[i]))
        if i < config.num_normal:
            ts = TimeSeries(f"synth-n{i}", values, NORMAL, 0)
        else:
            values = inject_anomaly(values, config.anomaly_span, config.anomaly_amplitude, config.anomaly_shape)
            ts = TimeSeries(f"synth-a{i - config.num_normal}", values, ANOMALY, 1)
        series.append(znormalize(ts) if normalize else ts)
    return Dataset("synthetic", series, 0)


def synthetic_shifts(config: SynthConfig) -> np.ndarray:
    """The per-series cyclic shifts drawn by :func:`synthesize_dataset`."""
    rng = np.random.default_rng(config.seed)
    return rng.integers(0, config.max_shift + 1, size=config.num_normal + config.num_anomalous)


# ----------------------------------------------------------------------
# Type-2 timing errors


def deletion_count(length: int, drop_fraction: float) -> int:
    # round half up
    return int(math.floor(drop_fraction * length + 0.5))


def apply_type2_deletion(series: TimeSeries, drop_fraction: float, seed: int, suffix: str | None = None) -> TimeSeries:
    """Delete ``round(drop_fraction * len)`` random samples, keeping the order of the rest."""
    if not 0.0 <= drop_fraction < 1.0:
        raise ValueError("drop_fraction must lie in [0, 1)")
    n = len(series)
    k = deletion_count(n, drop_fraction)
    if n - k < MIN_LENGTH:
        raise ValueError(f"deleting {k} of {n} samples leaves fewer than {MIN_LENGTH}")
    if k == 0:
        return series if suffix is None else replace(series, id=f"{series.id}{suffix}")
    rng = np.random.default_rng(seed)
    drop = rng.choice(n, size=k, replace=False)
    keep = np.ones(n, dtype=bool)
    keep[drop] = False
    new_id = series.id if suffix is None else f"{series.id}{suffix}"
    return replace(series, id=new_id, values=series.values[keep])


def augment_training_set(train: Dataset, fractions: Sequence[float] = (0.05, 0.10), copies_per_fraction: int = 1,
                         seed: int = 0) -> Dataset:
    """Append deleted copies of every series for each fraction."""
    if copies_per_fraction < 1:
        raise ValueError("copies_per_fraction must be positive")
    if not fractions:
        return Dataset(train.name, list(train.series), train.normal_class)
    seeds = np.random.SeedSequence(seed)
    n_children = len(train.series) * len(fractions) * copies_per_fraction
    children = iter(seeds.generate_state(n_children, dtype=np.uint32))
    out = list(train.series)
    for s in train.series:
        for fi, frac in enumerate(fractions):
            for c in range(copies_per_fraction):
                out.append(apply_type2_deletion(s, frac, int(next(children)), suffix=f"~del{fi}.{c}"))
    return Dataset(f"{train.name}-aug", out, train.normal_class)


def delete_dataset(dataset: Dataset, keep_ratio: float, seed: int) -> Dataset:
    """Shorten every series to ``keep_ratio`` of its length (test-time timing errors)."""
    if keep_ratio >= 1.0:
        return dataset
    seeds = np.random.SeedSequence(seed).generate_state(len(dataset.series), dtype=np.uint32)
    series = [apply_type2_deletion(s, 1.0 - keep_ratio, int(sd)) for s, sd in zip(dataset.series, seeds)]
    return Dataset(dataset.name, series, dataset.normal_class)
