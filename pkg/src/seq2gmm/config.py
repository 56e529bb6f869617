"""Experiment configuration: TOML sections, dotted overrides, environment seed."""
from __future__ import annotations

import copy
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .dataio import SynthConfig
from .errors import ConfigError
from .trainer import TrainingConfig

SEED_ENV = "SEQ2GMM_SEED"
KINDS = ("benchmark", "contamination", "deletion", "ablation", "synthetic")

MODEL_KEYS = ("lam", "K", "H", "D_E", "M", "M_max", "resample_len", "eps", "k_candidates", "quantile")
TRAIN_KEYS = ("T", "pretrain_epochs", "eta0", "decay", "batch_size", "seed", "em_max_iters", "em_tol",
              "validation_fraction", "clip_norm", "progress")

DEFAULTS: dict[str, dict[str, Any]] = {
    "data": {
        "source": "synthetic",  # synthetic | ucr
        "train": "",
        "test": "",
        "normal_class": None,
        "normalize": True,
        "period_length": 100,
        "num_normal": 60,
        "num_anomalous": 10,
        "max_shift": 20,
        "anomaly_span": [50, 25],
        "anomaly_amplitude": 2.0,
        "anomaly_shape": "bump",
        "holdout_fraction": 1.0 / 3.0,
    },
    "model": {},
    "train": {},
    "experiment": {
        "kind": "synthetic",
        "runs": 5,
        "anomaly_count": 0,
        "anomaly_counts": [0, 5, 10],
        "contamination_fractions": [],
        "keep_ratios": [1.0, 0.95, 0.9],
        "augment_fractions": [0.05, 0.10],
        "segment_counts": [1, 2, 3, 4],
        "aggregation": "max",
        "out": "results",
        "figures": True,
    },
}

# every TrainingConfig field lives in exactly one of [model] / [train]
_TC_DEFAULTS = TrainingConfig().to_dict()
for _k in MODEL_KEYS:
    DEFAULTS["model"][_k] = _TC_DEFAULTS[_k]
for _k in TRAIN_KEYS:
    DEFAULTS["train"][_k] = _TC_DEFAULTS[_k]


@dataclass
class ExperimentConfig:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["data"]))
    model: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["model"]))
    train: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["train"]))
    experiment: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["experiment"]))

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        kind = self.experiment["kind"]
        if kind not in KINDS:
            raise ConfigError(f"experiment.kind must be one of {KINDS}, got {kind!r}")
        if self.data["source"] not in ("synthetic", "ucr"):
            raise ConfigError("data.source must be 'synthetic' or 'ucr'")
        if self.data["source"] == "ucr" and not self.data["train"]:
            raise ConfigError("data.train must name a UCR file when data.source = 'ucr'")
        if int(self.experiment["runs"]) < 1:
            raise ConfigError("experiment.runs must be at least 1")
        if self.experiment["aggregation"] not in ("max", "mean"):
            raise ConfigError("experiment.aggregation must be 'max' or 'mean'")
        if kind == "contamination" and not (self.experiment["anomaly_counts"]
                                            or self.experiment["contamination_fractions"]):
            raise ConfigError("contamination needs experiment.anomaly_counts or contamination_fractions")
        if kind == "deletion" and not self.experiment["keep_ratios"]:
            raise ConfigError("deletion needs experiment.keep_ratios")
        if kind == "ablation" and not self.experiment["segment_counts"]:
            raise ConfigError("ablation needs experiment.segment_counts")
        self.training_config()  # validates the [model] / [train] values
        self.synth_config()

    def training_config(self, **overrides) -> TrainingConfig:
        merged = {k: _none_if_auto(v) for k, v in {**self.model, **self.train, **overrides}.items()}
        if merged.get("k_candidates") is not None:
            merged["k_candidates"] = tuple(merged["k_candidates"])
        return TrainingConfig.from_dict(merged)

    def synth_config(self, seed: int | None = None) -> SynthConfig:
        d = self.data
        return SynthConfig(
            period_length=int(d["period_length"]),
            num_normal=int(d["num_normal"]),
            num_anomalous=int(d["num_anomalous"]),
            max_shift=int(d["max_shift"]),
            anomaly_span=tuple(int(v) for v in d["anomaly_span"]),
            anomaly_amplitude=float(d["anomaly_amplitude"]),
            anomaly_shape=str(d["anomaly_shape"]),
            seed=int(self.train["seed"] if seed is None else seed),
        )

    @property
    def seed(self) -> int:
        return int(self.train["seed"])

    @property
    def runs(self) -> int:
        return int(self.experiment["runs"])

    def seeds(self) -> list[int]:
        return [self.seed + r for r in range(self.runs)]

    def to_dict(self) -> dict:
        return {s: copy.deepcopy(getattr(self, s)) for s in DEFAULTS}


def _none_if_auto(value: Any) -> Any:
    # TOML has no null; "auto" / "none" stand for an unset optional value
    if isinstance(value, str) and value.lower() in ("auto", "none"):
        return None
    return value


def _merge_section(name: str, base: dict, update: Mapping[str, Any]) -> None:
    for key, value in update.items():
        if key not in base:
            raise ConfigError(f"unknown option {name}.{key}")
        base[key] = value


def parse_value(raw: str) -> Any:
    """Interpret a flag value as a TOML literal, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def resolve_key(dotted: str) -> tuple[str, str]:
    """Map ``section.key`` or a bare key to its section."""
    if "." in dotted:
        section, key = dotted.split(".", 1)
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section {section!r}")
        if key not in DEFAULTS[section]:
            raise ConfigError(f"unknown option {dotted}")
        return section, key
    hits = [s for s in DEFAULTS if dotted in DEFAULTS[s]]
    if len(hits) != 1:
        raise ConfigError(f"unknown option {dotted}" if not hits else f"ambiguous option {dotted}")
    return hits[0], dotted


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None,
                environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    """Defaults, then the TOML file, then ``SEQ2GMM_SEED``, then explicit overrides."""
    doc = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            parsed = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section, values in parsed.items():
            if section not in doc or not isinstance(values, dict):
                raise ConfigError(f"{path}: unknown section [{section}]")
            _merge_section(section, doc[section], values)
    environ = os.environ if environ is None else environ
    if environ.get(SEED_ENV):
        try:
            doc["train"]["seed"] = int(environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {environ[SEED_ENV]!r}") from None
    for dotted, value in (overrides or {}).items():
        section, key = resolve_key(dotted)
        doc[section][key] = value
    return ExperimentConfig(**doc)


def overrides_from_pairs(pairs: Sequence[tuple[str, str]]) -> dict[str, Any]:
    return {k: parse_value(v) for k, v in pairs}
