"""Persisted model artifacts: ``model.npy`` (parameters) and ``model.json`` (metadata)."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import MissingArtifactError, ModelError
from .nn import ArchSpec, LayeredModel

PARAMS_FILE = "model.npy"
META_FILE = "model.json"


def model_digest(model: LayeredModel) -> str:
    """sha256 over the parameters' bytes, the canonical arch JSON and the train seed."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(model.params, dtype="<f8").tobytes())
    h.update(json.dumps(model.arch.to_dict(), sort_keys=True).encode())
    h.update(repr(model.train_seed).encode())
    return h.hexdigest()


def save_model(model: LayeredModel, directory) -> str:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    np.save(d / PARAMS_FILE, np.ascontiguousarray(model.params, dtype="<f8"), allow_pickle=False)
    digest = model_digest(model)
    meta = {
        "arch": model.arch.to_dict(),
        "train_seed": model.train_seed,
        "trained": model.trained,
        "num_params": int(model.params.size),
        "sha256": digest,
    }
    (d / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return digest


def load_model(directory) -> LayeredModel:
    d = Path(directory)
    if not (d / META_FILE).is_file() or not (d / PARAMS_FILE).is_file():
        raise MissingArtifactError(f"no model artifact in {d}; run the train command first")
    meta = json.loads((d / META_FILE).read_text())
    params = np.load(d / PARAMS_FILE, allow_pickle=False)
    model = LayeredModel(ArchSpec.from_dict(meta["arch"]), params, meta["trained"], meta["train_seed"])
    if model_digest(model) != meta["sha256"]:
        raise ModelError(f"model artifact in {d} fails its digest check")
    return model
