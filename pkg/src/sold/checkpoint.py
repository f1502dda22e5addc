"""Checkpoint files: a text header followed by raw little-endian float32 tensors.

Layout::

    #sold-checkpoint 1
    {"format_version": 1, "tensors": [...], "hyperparameters": {...}, ...}
    <bytes>

The JSON header is one line. Tensors follow in header order: parameters, then
first moments, then second moments.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .errors import DataError, PreconditionError
from .model import ModelConfig, ModelState

MAGIC = b"#sold-checkpoint 1\n"
FORMAT_VERSION = 1
LOSS_NOTE = "mse summed over latent entries, cross-entropy summed over positions, both averaged over batch"


def save_checkpoint(path, state: ModelState, extra: dict | None = None) -> None:
    tensors, blobs = [], []
    for kind, table in (("param", state.params), ("m", state.m), ("v", state.v)):
        for name, arr in table.items():
            tensors.append({"kind": kind, "name": name, "shape": list(arr.shape)})
            blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "tensors": tensors,
        "hyperparameters": state.hyperparameters(),
        "seed": state.seed,
        "step": state.step,
        "loss_normalization": LOSS_NOTE,
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[ModelState, dict]:
    """Return ``(state, header)``; raises ``PreconditionError`` if the file is missing."""
    try:
        fh = open(path, "rb")
    except FileNotFoundError:
        raise PreconditionError(f"checkpoint {path} does not exist") from None
    with fh:
        if fh.readline() != MAGIC:
            raise DataError(f"{path} is not a checkpoint file")
        header = json.loads(fh.readline())
        if header.get("format_version") != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported format version {header.get('format_version')}")
        tables = {"param": {}, "m": {}, "v": {}}
        for t in header["tensors"]:
            count = int(np.prod(t["shape"], dtype=np.int64))
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise DataError(f"{path}: truncated tensor {t['name']}")
            arr = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(t["shape"])
            tables[t["kind"]][t["name"]] = arr
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes after the last tensor")
    cfg = ModelConfig(**header["hyperparameters"])
    state = ModelState(config=cfg, params=tables["param"], m=tables["m"], v=tables["v"],
                       step=int(header["step"]), seed=header["seed"])
    return state, header


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
