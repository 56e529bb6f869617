import json

import numpy as np
import pytest

from seq2gmm.config import load_config
from seq2gmm.dataio import ANOMALY, NORMAL
from seq2gmm.experiments import (
    MetricResult,
    contamination_counts,
    jaccard,
    localization_stats,
    ordering_holds,
    prepare_split,
    run_ablation_segments,
    run_benchmark,
    run_contamination,
    run_deletion,
)
from seq2gmm.scoring import ScoreReport, Shapelet

OVERRIDES = {
    "data.period_length": 40, "data.num_normal": 12, "data.num_anomalous": 4, "data.max_shift": 8,
    "data.anomaly_span": [20, 10], "model.K": 2, "model.M": 2, "model.H": 4, "model.D_E": 5,
    "train.T": 1, "train.pretrain_epochs": 2, "train.batch_size": 8, "experiment.figures": False,
}


def _cfg(**extra):
    return load_config(overrides={**OVERRIDES, **extra}, environ={})


def test_jaccard():
    assert jaccard((0, 10), (0, 10)) == 1.0
    assert jaccard((0, 10), (10, 20)) == 0.0
    assert jaccard((0, 10), (5, 15)) == pytest.approx(5 / 15)


def test_localization_stats():
    truth = (10, 20)
    reports = [
        ScoreReport("a", [1.0, 5.0], 5.0, [Shapelet(2, (10, 20), 5.0)], ANOMALY, [1, 10, 20]),
        ScoreReport("b", [6.0, 1.0], 6.0, [Shapelet(1, (0, 10), 6.0)], ANOMALY, [1, 10, 20]),
        ScoreReport("c", [1.0, 1.0], 1.0, [], NORMAL, [1, 10, 20]),
        ScoreReport("d", [9.0, 1.0], 9.0, [Shapelet(1, (0, 10), 9.0)], NORMAL, [1, 10, 20]),
    ]
    stats = localization_stats(reports, truth)
    assert stats["hit_rate"] == 0.5 and stats["top1_rate"] == 0.5
    assert stats["argmax_overlap_rate"] == 0.5
    assert stats["normal_flag_rate"] == 0.25


def test_metric_result_single_run():
    r = MetricResult("x", [0], [0.8], [0.7])
    assert r.n_runs == 1 and r.auc == 0.8 and r.auc_sd == 0.0
    assert r.to_dict()["auc_sd"] == 0.0


def test_prepare_split_synthetic():
    cfg = _cfg()
    train, test = prepare_split(cfg, 0)
    assert all(s.label == NORMAL for s in train.series)
    assert len(train) == 8 and len(test) == 4 + 4
    assert not {s.id for s in train.series} & {s.id for s in test.series}
    train2, test2 = prepare_split(cfg, 0, 2)
    assert len(train2.anomalies()) == 2 and len(test2.anomalies()) == 2


def test_prepare_split_ucr(tmp_path):
    rng = np.random.default_rng(0)
    rows = [f"{c}\t" + "\t".join(map(str, rng.normal(size=12))) for c in [1] * 6 + [2] * 3]
    (tmp_path / "X_TRAIN.tsv").write_text("\n".join(rows) + "\n")
    (tmp_path / "X_TEST.tsv").write_text("\n".join(rows[:4] + rows[-2:]) + "\n")
    cfg = _cfg(**{"data.source": "ucr", "data.train": str(tmp_path / "X_TRAIN.tsv"),
                  "data.test": str(tmp_path / "X_TEST.tsv")})
    train, test = prepare_split(cfg, 1, 1)
    assert len(train.normals()) == 6 and len(train.anomalies()) == 1
    assert len(test) == 6 + 2


def test_benchmark_reproducible_and_contamination_zero_row(tmp_path):
    cfg = _cfg(**{"experiment.runs": 2})
    a = run_benchmark(cfg, tmp_path / "a")
    b = run_benchmark(cfg, None)
    assert a.auc_runs == b.auc_runs and a.aupr_runs == b.aupr_runs
    assert a.seeds == [0, 1]
    doc = json.loads((tmp_path / "a" / "results.json").read_text())
    assert doc["tables"]["benchmark"]["auc_runs"] == a.auc_runs
    assert "localization" in a.extra
    assert len(list((tmp_path / "a" / "scores").glob("*.jsonl"))) == 2
    table = run_contamination(load_config(overrides={**OVERRIDES, "experiment.runs": 2,
                                                     "experiment.anomaly_counts": [0, 2]}, environ={}))
    assert table[0]["auc_runs"] == a.auc_runs
    for row in table:
        assert row["loss"] == pytest.approx((table[0]["auc"] - row["auc"]) / table[0]["auc"])


def test_contamination_counts_from_fractions():
    cfg = _cfg(**{"experiment.contamination_fractions": [0.1, 0.25]})
    assert contamination_counts(cfg) == [0, 1, 2]


def test_deletion_table():
    cfg = _cfg(**{"experiment.keep_ratios": [1.0, 0.9], "experiment.augment_fractions": [0.05]})
    table = run_deletion(cfg)
    assert [(r["augmented"], r["keep_ratio"]) for r in table] == [(False, 1.0), (False, 0.9), (True, 1.0), (True, 0.9)]
    bench = run_benchmark(_cfg())
    assert table[0]["auc_runs"] == bench.auc_runs
    for r in table:
        base = next(x for x in table if x["augmented"] == r["augmented"] and x["keep_ratio"] == 1.0)
        assert r["drop"] == pytest.approx(base["auc"] - r["auc"])
    assert run_deletion(cfg) == table


def test_ablation_rows_and_ordering():
    table = run_ablation_segments(_cfg(**{"experiment.segment_counts": [1, 2]}))
    assert [r["M"] for r in table] == [1, 2]
    fake = [{"M": 4, "auc_runs": [0.9]}, {"M": 2, "auc_runs": [0.8]}, {"M": 1, "auc_runs": [0.7]}]
    assert ordering_holds(fake, 0)
    fake[1]["auc_runs"] = [0.95]
    assert not ordering_holds(fake, 0)
