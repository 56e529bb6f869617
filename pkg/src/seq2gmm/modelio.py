"""Persisting trained models: a versioned JSON model file plus a JSON sidecar.

The model file holds everything scoring needs (segment count, network
weights, frozen mixture, configuration). Arrays are stored with explicit
shapes in row-major order and floats are written with ``repr`` precision, so
a save/load round trip is bit-exact. The sidecar next to it carries the
training trace, the fingerprint of the training data and the sorted
training-segment energies used for shapelet thresholds.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import neuralnet as nn
from .dataio import Dataset
from .errors import Seq2GMMError
from .mixture import GmmParams
from .trainer import TrainedModel, TrainingConfig, TrainingTrace

FORMAT = "seq2gmm-model"
VERSION = 1
SIDECAR_SUFFIX = ".meta.json"


class ModelFormatError(Seq2GMMError, ValueError):
    """The file is not a model file this version can read."""


def _encode_array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.ravel(order="C").tolist()}


def _decode_array(doc: dict) -> np.ndarray:
    shape = tuple(int(s) for s in doc["shape"])
    data = np.asarray(doc["data"], dtype=np.float64)
    if data.size != int(np.prod(shape)):
        raise ModelFormatError(f"array data has {data.size} values but shape {shape}")
    return data.reshape(shape, order="C")


def sidecar_path(model_path: str | Path) -> Path:
    p = Path(model_path)
    return p.with_name(p.name + SIDECAR_SUFFIX)


def dataset_fingerprint(dataset: Dataset) -> str:
    """SHA-256 over series ids, labels and the raw float64 bytes of each series."""
    h = hashlib.sha256()
    for s in dataset.series:
        h.update(s.id.encode())
        h.update(b"\0")
        h.update(str(s.label).encode())
        h.update(b"\0")
        h.update(np.ascontiguousarray(s.values, dtype="<f8").tobytes())
    return h.hexdigest()


def model_to_dict(model: TrainedModel) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "layout": "row-major",
        "num_segments": model.num_segments,
        "normalized": model.normalized,
        "hidden": model.net.hidden,
        "config": model.config.to_dict(),
        "networks": {
            block: {name: _encode_array(arr) for name, arr in sorted(params.items())}
            for block, params in model.net.blocks().items()
        },
        "gmm": model.gmm.to_dict(),
        "pretrain_recon": model.pretrain_recon,
    }


def model_from_dict(doc: dict, train_energies: np.ndarray | None = None) -> TrainedModel:
    if doc.get("format") != FORMAT:
        raise ModelFormatError("not a seq2gmm model file")
    if doc.get("version") != VERSION:
        raise ModelFormatError(f"unsupported model file version {doc.get('version')!r}")
    blocks = {b: {k: _decode_array(v) for k, v in params.items()} for b, params in doc["networks"].items()}
    missing = {"enc", "dec", "est"} - set(blocks)
    if missing:
        raise ModelFormatError(f"model file lacks parameter block(s) {sorted(missing)}")
    net = nn.Network(blocks["enc"], blocks["dec"], blocks["est"], hidden=int(doc["hidden"]))
    config = doc["config"]
    config["k_candidates"] = tuple(config["k_candidates"])
    energies = np.zeros(0) if train_energies is None else np.asarray(train_energies, dtype=np.float64)
    return TrainedModel(
        num_segments=int(doc["num_segments"]),
        net=net,
        gmm=GmmParams.from_dict(doc["gmm"]),
        config=TrainingConfig.from_dict(config),
        normalized=bool(doc["normalized"]),
        train_energies=energies,
        pretrain_recon=float(doc["pretrain_recon"]),
    )


def save_model(model: TrainedModel, path: str | Path, trace: TrainingTrace | None = None,
               train: Dataset | None = None) -> Path:
    """Write the model file and its sidecar; returns the sidecar path."""
    path = Path(path)
    path.write_text(json.dumps(model_to_dict(model)))
    meta = {
        "config": model.config.to_dict(),
        "trace": trace.to_dict() if trace is not None else None,
        "dataset": None if train is None else {
            "name": train.name,
            "series": len(train),
            "sha256": dataset_fingerprint(train),
        },
        "train_energies": np.asarray(model.train_energies, dtype=np.float64).tolist(),
    }
    side = sidecar_path(path)
    side.write_text(json.dumps(meta, indent=1))
    return side


def load_model(path: str | Path) -> TrainedModel:
    """Read a model file; training energies come from the sidecar when it exists."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"model file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc})") from None
    energies = None
    side = sidecar_path(path)
    if side.is_file():
        energies = json.loads(side.read_text()).get("train_energies")
    return model_from_dict(doc, energies)


def load_sidecar(path: str | Path) -> dict:
    side = sidecar_path(path)
    if not side.is_file():
        raise FileNotFoundError(f"model sidecar not found: {side}")
    return json.loads(side.read_text())
