"""Language-neutral model checkpoints: one raw weight blob plus a JSON index.

Tensors are stored little-endian in sorted-name order so that identical
models always serialize to identical bytes; the blob hash doubles as the
model version used for compatibility checks between phases.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import persist

BLOB_NAME = "weights.bin"
META_NAME = "checkpoint.json"


def save_checkpoint(out_dir: str | Path, kind: str, model: torch.nn.Module,
                    config_dict: dict, extra: dict = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    tensors = []
    chunks = []
    offset = 0
    for name in sorted(state):
        arr = state[name].detach().cpu().numpy()
        data = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
        tensors.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
            "offset": offset,
        })
        chunks.append(data)
        offset += len(data)
    blob = b"".join(chunks)
    (out / BLOB_NAME).write_bytes(blob)
    meta = {
        "format_version": persist.FORMAT_VERSION,
        "kind": kind,
        "config": config_dict,
        "config_hash": persist.config_hash(config_dict),
        "tensors": tensors,
        "weights_hash": persist.sha256_bytes(blob),
    }
    meta.update(extra or {})
    persist.write_json(out / META_NAME, meta)
    return meta


def read_meta(ckpt_dir: str | Path) -> dict:
    return persist.read_json(Path(ckpt_dir) / META_NAME)


def load_checkpoint(ckpt_dir: str | Path, builder: Callable[[dict], torch.nn.Module],
                    expected_kind: str) -> tuple:
    """Rebuild the model from its config and load the stored tensors."""
    ckpt = Path(ckpt_dir)
    meta = read_meta(ckpt)
    if meta["kind"] != expected_kind:
        raise ValueError(f"{ckpt}: checkpoint kind {meta['kind']!r}, expected {expected_kind!r}")
    blob = (ckpt / BLOB_NAME).read_bytes()
    if persist.sha256_bytes(blob) != meta["weights_hash"]:
        raise ValueError(f"{ckpt}: weight blob does not match recorded hash")
    model = builder(meta["config"])
    state = {}
    for entry in meta["tensors"]:
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=entry["offset"])
        state[entry["name"]] = torch.from_numpy(arr.reshape(entry["shape"]).copy())
    model.load_state_dict(state)
    model.eval()
    return model, meta
