"""Checkpoint container.

A checkpoint is a NumPy ``.npz`` archive (zip of ``.npy`` members, C order,
little-endian, explicit dtypes) holding one member per parameter tensor plus
a ``__meta__`` member: a UTF-8 JSON document with

    format          "sssbench-checkpoint"
    version         integer format version (currently 1)
    kind            attn | gru | pop | markov
    config          model configuration (dict)
    config_hash     sha256 of the canonical JSON of ``config``
    shapes          {tensor name: shape}
    provenance      free-form training metadata (split, target, loss, seed)
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from sssbench.models.attn import AttnRec
from sssbench.models.base import ModelConfig
from sssbench.models.counting import MarkovModel, PopularityModel
from sssbench.models.gru import GruRec

FORMAT = "sssbench-checkpoint"
VERSION = 1
NEURAL = {"attn": AttnRec, "gru": GruRec}


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _arrays(model) -> tuple[dict, dict]:
    if model.kind in NEURAL:
        return dict(model.params), model.config.to_dict()
    if model.kind == "pop":
        return {"popularity": model.counts}, {"kind": "pop", "num_items": model.num_items}
    if model.kind == "markov":
        return model.state_arrays(), {"kind": "markov", "num_items": model.num_items}
    raise ValueError(f"cannot checkpoint model kind {model.kind!r}")


def save_checkpoint(path, model, provenance: dict | None = None) -> Path:
    path = Path(path)
    arrays, config = _arrays(model)
    arrays = {k: np.ascontiguousarray(v).astype(v.dtype.newbyteorder("<")) for k, v in arrays.items()}
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "kind": model.kind,
        "config": config,
        "config_hash": config_hash(config),
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
        "provenance": provenance or {},
    }
    blob = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with path.open("wb") as fh:
        np.savez(fh, __meta__=blob, **arrays)
    return path


def read_meta(path) -> dict:
    with np.load(path) as data:
        return json.loads(bytes(data["__meta__"]).decode())


def load_checkpoint(path):
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format") != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} file")
        if meta["version"] > VERSION:
            raise ValueError(f"{path}: checkpoint version {meta['version']} is newer than supported")
        if config_hash(meta["config"]) != meta["config_hash"]:
            raise ValueError(f"{path}: config hash mismatch")
        arrays = {k: np.array(data[k]) for k in meta["shapes"]}
    for k, shape in meta["shapes"].items():
        if list(arrays[k].shape) != shape:
            raise ValueError(f"{path}: tensor {k} has shape {arrays[k].shape}, expected {shape}")
    kind = meta["kind"]
    if kind in NEURAL:
        return NEURAL[kind](ModelConfig(**meta["config"]), arrays)
    num_items = meta["config"]["num_items"]
    if kind == "pop":
        return PopularityModel(num_items, arrays["popularity"])
    return MarkovModel.from_arrays(num_items, arrays)
