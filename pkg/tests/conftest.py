"""Shared fixtures and hypothesis profiles."""
from __future__ import annotations

import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=300, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_model_and_data():
    """A small trained model on a short synthetic dataset (a few seconds to build)."""
    from seq2gmm.dataio import Dataset, SynthConfig, synthesize_dataset
    from seq2gmm.trainer import TrainingConfig, surrogate_train

    ds = synthesize_dataset(SynthConfig(period_length=40, num_normal=12, num_anomalous=4, max_shift=8,
                                        anomaly_span=(20, 10), seed=3), normalize=True)
    train = Dataset("tiny-train", ds.normals(), 0)
    cfg = TrainingConfig(K=2, M=2, H=4, D_E=5, T=2, pretrain_epochs=3, batch_size=8, seed=1)
    model, trace = surrogate_train(train, cfg)
    return model, trace, ds, train


# ---------------------------------------------------------------- acceptance summary

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line for an acceptance criterion."""

    def record(criterion: str, passed: bool, detail: str) -> bool:
        _ACCEPTANCE.append((criterion, bool(passed), detail))
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}")
