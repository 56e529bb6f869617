"""Experiment harnesses: benchmark, contamination, deletion and segment-count sweeps.

Every harness repeats a split/train/score cycle over a list of seeds and
writes a results directory::

    results.json   machine-readable tables
    results.md     the same tables as Markdown
    scores/        one JSON-lines report file per run
    latent/        latent exports (CSV) per run
    trace/         training traces (JSON) per run
    figures/       latent scatter, convergence trace and shapelet plots

Runs are executed in seed order, so tables are reproducible from the
configuration and seed list alone.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import plotting
from .config import ExperimentConfig
from .dataio import (
    ANOMALY,
    Dataset,
    augment_training_set,
    build_benchmark,
    delete_dataset,
    holdout_split,
    load_ucr_dataset,
    major_class,
    merge,
    synthesize_dataset,
)
from .errors import Seq2GMMError
from .metrics import auc, aupr, summarize
from .scoring import ScoreReport, export_latent, score_dataset, write_latent_csv, write_reports_jsonl
from .trainer import TrainedModel, TrainingConfig, TrainingTrace, surrogate_train

log = logging.getLogger(__name__)

JACCARD_HIT = 0.3


class ExperimentError(Seq2GMMError, RuntimeError):
    """A run failed; ``seed`` names the run that aborted the experiment."""

    def __init__(self, message: str, seed: int):
        super().__init__(f"run with seed {seed} failed: {message}")
        self.seed = seed


@dataclass
class MetricResult:
    label: str
    seeds: list[int]
    auc_runs: list[float]
    aupr_runs: list[float]
    extra: dict = field(default_factory=dict)

    @property
    def n_runs(self) -> int:
        return len(self.auc_runs)

    @property
    def auc(self) -> float:
        return summarize(self.auc_runs)[0]

    @property
    def auc_sd(self) -> float:
        return summarize(self.auc_runs)[1]

    @property
    def aupr(self) -> float:
        return summarize(self.aupr_runs)[0]

    @property
    def aupr_sd(self) -> float:
        return summarize(self.aupr_runs)[1]

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "n_runs": self.n_runs,
            "seeds": self.seeds,
            "auc": self.auc,
            "auc_sd": self.auc_sd,
            "aupr": self.aupr,
            "aupr_sd": self.aupr_sd,
            "auc_runs": self.auc_runs,
            "aupr_runs": self.aupr_runs,
            **self.extra,
        }


@dataclass
class RunOutput:
    seed: int
    auc: float
    aupr: float
    model: TrainedModel
    trace: TrainingTrace
    reports: list[ScoreReport]
    localization: dict | None = None


# ----------------------------------------------------------------------
# data


def _ucr_paths(cfg: ExperimentConfig) -> tuple[Path, Path | None]:
    train = Path(cfg.data["train"])
    test = Path(cfg.data["test"]) if cfg.data["test"] else None
    for p in (train, test):
        if p is not None and not p.is_file():
            raise FileNotFoundError(f"dataset file not found: {p}")
    return train, test


def prepare_split(cfg: ExperimentConfig, seed: int, anomaly_count: int | None = None) -> tuple[Dataset, Dataset]:
    """Training and test sets for one run.

    UCR: every Normal series of the training file plus ``anomaly_count``
    random anomalies form the training set; the test file and the leftover
    anomalies form the test set. Synthetic: a seeded holdout of the normal
    series joins the anomalies that were not injected into training.
    """
    count = int(cfg.experiment["anomaly_count"] if anomaly_count is None else anomaly_count)
    normalize = bool(cfg.data["normalize"])
    if cfg.data["source"] == "ucr":
        train_path, test_path = _ucr_paths(cfg)
        normal_class = cfg.data["normal_class"]
        if normal_class is None:
            normal_class = major_class(train_path)
        full = load_ucr_dataset(train_path, normal_class, normalize)
        train, leftover = build_benchmark(full, count, seed)
        parts = [leftover]
        if test_path is not None:
            parts.insert(0, load_ucr_dataset(test_path, normal_class, normalize))
        return train, merge(f"{full.name}-test", parts)
    ds = synthesize_dataset(cfg.synth_config(seed), normalize=normalize)
    fit, held = holdout_split(Dataset(ds.name, ds.normals(), ds.normal_class),
                              float(cfg.data["holdout_fraction"]), seed)
    pool = Dataset(ds.name, ds.anomalies(), ds.normal_class)
    train, rest = build_benchmark(merge(ds.name, [fit, pool]), count, seed)
    return Dataset(f"{ds.name}-train", train.series, ds.normal_class), merge(f"{ds.name}-test", [held, rest])


def injected_span(cfg: ExperimentConfig) -> tuple[int, int] | None:
    if cfg.data["source"] != "synthetic":
        return None
    offset, length = (int(v) for v in cfg.data["anomaly_span"])
    return offset, offset + length


def jaccard(a: tuple[int, int], b: tuple[int, int]) -> float:
    """Jaccard index of two half-open integer intervals."""
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def localization_stats(reports: Sequence[ScoreReport], truth: tuple[int, int]) -> dict:
    """How well shapelets of anomalous series recover the injected span.

    ``hit_rate``: some returned shapelet has Jaccard above 0.3.
    ``top1_rate``: the highest-scoring shapelet alone does.
    ``argmax_overlap_rate``: the maximum-energy segment intersects the span.
    ``normal_flag_rate``: fraction of normal-series segments returned as shapelets.
    """
    hits, top1, argmax = [], [], []
    flagged = total = 0
    for r in reports:
        if r.label != ANOMALY:
            flagged += len(r.shapelets)
            total += len(r.segment_scores)
            continue
        hits.append(any(jaccard(s.span, truth) > JACCARD_HIT for s in r.shapelets))
        top1.append(bool(r.shapelets) and jaccard(r.shapelets[0].span, truth) > JACCARD_HIT)
        b = r.breakpoints
        spans = [(0, b[1])] + [(b[j], b[j + 1]) for j in range(1, len(b) - 1)]
        j = int(np.argmax(r.segment_scores))
        argmax.append(jaccard(spans[j], truth) > 0.0)
    mean = (lambda v: float(np.mean(v)) if v else float("nan"))
    return {
        "hit_rate": mean(hits),
        "top1_rate": mean(top1),
        "argmax_overlap_rate": mean(argmax),
        "normal_flag_rate": flagged / total if total else float("nan"),
    }


# ----------------------------------------------------------------------
# runs


def _outdir(out: str | Path | None) -> Path | None:
    if out is None:
        return None
    out = Path(out)
    for sub in ("scores", "latent", "trace", "figures"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    return out


def run_once(train: Dataset, test: Dataset, tconf: TrainingConfig, seed: int, aggregation: str = "max",
             out: Path | None = None, tag: str = "run", figures: bool = True,
             truth: tuple[int, int] | None = None, test_sets: dict[str, Dataset] | None = None) -> RunOutput:
    """Train on ``train``, score ``test`` and write per-run artefacts under ``out``."""
    try:
        model, trace = surrogate_train(train, tconf)
        reports = score_dataset(test, model, aggregation)
        scores = [r.series_score for r in reports]
        labels = [r.label for r in reports]
        result = RunOutput(seed, auc(scores, labels), aupr(scores, labels), model, trace, reports)
    except Seq2GMMError as exc:
        raise ExperimentError(str(exc), seed) from exc
    if truth is not None:
        result.localization = localization_stats(reports, truth)
    if out is not None:
        name = f"{tag}-seed{seed}"
        write_reports_jsonl(reports, out / "scores" / f"{name}.jsonl")
        (out / "trace" / f"{name}.json").write_text(json.dumps(trace.to_dict(), indent=1))
        rows = export_latent(test, model)
        write_latent_csv(rows, out / "latent" / f"{name}.csv")
        if figures:
            _run_figures(out / "figures", name, test, model, trace, reports, rows, truth)
    return result


def _run_figures(figdir: Path, name: str, test: Dataset, model: TrainedModel, trace: TrainingTrace,
                 reports: Sequence[ScoreReport], rows, truth) -> None:
    plotting.latent_scatter(np.array([r.y2d for r in rows]), [r.label for r in rows],
                            figdir / f"{name}-latent.png")
    plotting.convergence_trace(trace.objectives, figdir / f"{name}-trace.png", trace.o1, trace.pretrain_losses)
    by_id = {s.id: s for s in test.series}
    anomalous = sorted((r for r in reports if r.label == ANOMALY), key=lambda r: -r.series_score)[:3]
    for r in anomalous:
        plotting.shapelet_plot(by_id[r.series_id].values, r.breakpoints, r.shapelets,
                               figdir / f"{name}-shapelets-{r.series_id}.png", title=r.series_id, truth=truth)


def _collect(label: str, runs: Sequence[RunOutput], extra: dict | None = None) -> MetricResult:
    res = MetricResult(label, [r.seed for r in runs], [r.auc for r in runs], [r.aupr for r in runs],
                       dict(extra or {}))
    locs = [r.localization for r in runs if r.localization is not None]
    if locs:
        res.extra["localization"] = {k: float(np.mean([d[k] for d in locs])) for k in locs[0]}
    res.extra["o1_le_o3_runs"] = [bool(not r.trace.bound_violation) for r in runs]
    return res


def _write_results(out: Path | None, kind: str, cfg: ExperimentConfig, tables: dict, markdown: str) -> None:
    if out is None:
        return
    doc = {"kind": kind, "config": cfg.to_dict(), "tables": tables}
    (out / "results.json").write_text(json.dumps(doc, indent=1))
    (out / "results.md").write_text(markdown)


def _md_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    fmt = lambda v: f"{v:.4f}" if isinstance(v, float) else str(v)
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(fmt(v) for v in row) + " |" for row in rows]
    return "\n".join(lines) + "\n"


def run_benchmark(cfg: ExperimentConfig, out: str | Path | None = None) -> MetricResult:
    """Repeat split, train, score and evaluate for every seed; report mean and sd."""
    out = _outdir(out)
    tconf_base = cfg.training_config()
    runs = []
    for seed in cfg.seeds():
        train, test = prepare_split(cfg, seed)
        tconf = TrainingConfig.from_dict({**tconf_base.to_dict(), "seed": seed})
        runs.append(run_once(train, test, tconf, seed, cfg.experiment["aggregation"], out, "benchmark",
                             bool(cfg.experiment["figures"]), injected_span(cfg)))
        log.info("seed %d: AUC %.4f AUPR %.4f", seed, runs[-1].auc, runs[-1].aupr)
    res = _collect(_dataset_label(cfg), runs, {"anomaly_count": int(cfg.experiment["anomaly_count"])})
    rows = [[res.label, res.n_runs, res.auc, res.auc_sd, res.aupr, res.aupr_sd]]
    md = "# Benchmark\n\n" + _md_table(["dataset", "runs", "AUC", "sd", "AUPR", "sd"], rows)
    if "localization" in res.extra:
        loc = res.extra["localization"]
        md += "\n## Shapelet localization\n\n" + _md_table(list(loc), [[loc[k] for k in loc]])
    _write_results(out, "benchmark", cfg, {"benchmark": res.to_dict()}, md)
    if out is not None:
        plotting.metric_bars([(res.label, res.auc, res.auc_sd)], out / "figures" / "auc.png")
    return res


def _dataset_label(cfg: ExperimentConfig) -> str:
    if cfg.data["source"] == "ucr":
        return Path(cfg.data["train"]).stem
    return "synthetic"


def contamination_counts(cfg: ExperimentConfig) -> list[int]:
    counts = [int(c) for c in cfg.experiment["anomaly_counts"]]
    fractions = cfg.experiment["contamination_fractions"]
    if fractions:
        n_normal = len(prepare_split(cfg, cfg.seed, 0)[0])
        counts = [int(round(f * n_normal)) for f in fractions]
    if 0 not in counts:
        counts = [0] + counts
    return sorted(dict.fromkeys(counts))


def run_contamination(cfg: ExperimentConfig, out: str | Path | None = None) -> list[dict]:
    """AUC per number of anomalies injected into training, with loss relative to the clean run."""
    out = _outdir(out)
    tconf_base = cfg.training_config()
    results = []
    for count in contamination_counts(cfg):
        runs = []
        for seed in cfg.seeds():
            train, test = prepare_split(cfg, seed, count)
            tconf = TrainingConfig.from_dict({**tconf_base.to_dict(), "seed": seed})
            runs.append(run_once(train, test, tconf, seed, cfg.experiment["aggregation"], out, f"contam{count}",
                                 bool(cfg.experiment["figures"]) and count == 0, injected_span(cfg)))
        results.append(_collect(f"{_dataset_label(cfg)} ({count})", runs, {"anomaly_count": count}))
    clean = results[0].auc
    table = []
    for res in results:
        row = res.to_dict()
        row["loss"] = (clean - res.auc) / clean if clean > 0 else float("nan")
        table.append(row)
    md = "# Contamination\n\n" + _md_table(
        ["anomalies in training", "AUC", "sd", "relative loss"],
        [[r["anomaly_count"], r["auc"], r["auc_sd"], r["loss"]] for r in table])
    _write_results(out, "contamination", cfg, {"contamination": table}, md)
    if out is not None:
        plotting.metric_bars([(str(r["anomaly_count"]), r["auc"], r["auc_sd"]) for r in table],
                             out / "figures" / "auc.png")
    return table


def run_deletion(cfg: ExperimentConfig, out: str | Path | None = None) -> list[dict]:
    """AUC at reduced test lengths, training with and without deletion augmentation."""
    out = _outdir(out)
    tconf_base = cfg.training_config()
    ratios = [float(r) for r in cfg.experiment["keep_ratios"]]
    fractions = tuple(float(f) for f in cfg.experiment["augment_fractions"])
    per: dict[tuple[bool, float], list[RunOutput]] = {}
    for augmented in (False, True):
        for seed in cfg.seeds():
            train, test = prepare_split(cfg, seed)
            if augmented:
                train = augment_training_set(train, fractions, seed=seed)
            tconf = TrainingConfig.from_dict({**tconf_base.to_dict(), "seed": seed})
            tag = "aug" if augmented else "plain"
            try:
                model, trace = surrogate_train(train, tconf)
            except Seq2GMMError as exc:
                raise ExperimentError(str(exc), seed) from exc
            for ratio in ratios:
                shortened = delete_dataset(test, ratio, seed)
                reports = score_dataset(shortened, model, cfg.experiment["aggregation"])
                scores = [r.series_score for r in reports]
                labels = [r.label for r in reports]
                run = RunOutput(seed, auc(scores, labels), aupr(scores, labels), model, trace, reports)
                per.setdefault((augmented, ratio), []).append(run)
                if out is not None:
                    write_reports_jsonl(reports, out / "scores" / f"{tag}-keep{ratio:g}-seed{seed}.jsonl")
            if out is not None:
                (out / "trace" / f"{tag}-seed{seed}.json").write_text(json.dumps(trace.to_dict(), indent=1))
    table = []
    for augmented in (False, True):
        base = summarize([r.auc for r in per[(augmented, ratios[0])]])[0]
        for ratio in ratios:
            res = _collect(f"{'augmented' if augmented else 'plain'} {ratio:g}", per[(augmented, ratio)],
                           {"keep_ratio": ratio, "augmented": augmented})
            row = res.to_dict()
            row["drop"] = base - res.auc
            table.append(row)
    md = "# Deletion robustness\n\n" + _md_table(
        ["augmented", "test length", "AUC", "sd", f"drop from {ratios[0]:g}"],
        [[r["augmented"], r["keep_ratio"], r["auc"], r["auc_sd"], r["drop"]] for r in table])
    _write_results(out, "deletion", cfg, {"deletion": table}, md)
    if out is not None:
        plotting.metric_bars([(f"{'A' if r['augmented'] else 'P'} {r['keep_ratio']:g}", r["auc"], r["auc_sd"])
                              for r in table], out / "figures" / "auc.png")
    return table


def run_ablation_segments(cfg: ExperimentConfig, out: str | Path | None = None) -> list[dict]:
    """AUC for each fixed segment count; M=1 feeds whole series to the network."""
    out = _outdir(out)
    tconf_base = cfg.training_config()
    table = []
    for M in [int(m) for m in cfg.experiment["segment_counts"]]:
        runs = []
        for seed in cfg.seeds():
            train, test = prepare_split(cfg, seed)
            tconf = TrainingConfig.from_dict({**tconf_base.to_dict(), "seed": seed, "M": M})
            runs.append(run_once(train, test, tconf, seed, cfg.experiment["aggregation"], out, f"M{M}",
                                 False, injected_span(cfg)))
        table.append(_collect(f"M={M}", runs, {"M": M}).to_dict())
    md = "# Segment-count ablation\n\n" + _md_table(
        ["M", "AUC", "sd", "AUPR"], [[r["M"], r["auc"], r["auc_sd"], r["aupr"]] for r in table])
    _write_results(out, "ablation", cfg, {"ablation": table}, md)
    if out is not None:
        plotting.metric_bars([(f"M={r['M']}", r["auc"], r["auc_sd"]) for r in table], out / "figures" / "auc.png")
    return table


def ordering_holds(table: Sequence[dict], seed_index: int, order: Sequence[int] = (4, 2, 1)) -> bool:
    """Whether AUC strictly decreases along ``order`` of M values for one seed."""
    by_m = {r["M"]: r["auc_runs"][seed_index] for r in table}
    vals = [by_m[m] for m in order]
    return all(a > b for a, b in zip(vals, vals[1:]))


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None):
    kind = cfg.experiment["kind"]
    if kind in ("benchmark", "synthetic"):
        return run_benchmark(cfg, out)
    if kind == "contamination":
        return run_contamination(cfg, out)
    if kind == "deletion":
        return run_deletion(cfg, out)
    if kind == "ablation":
        return run_ablation_segments(cfg, out)
    raise ValueError(f"unknown experiment kind {kind!r}")
