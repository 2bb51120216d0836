"""Hashing, canonical JSON, and raw-float serialization helpers.

Everything written to disk goes through these functions so that identical
inputs always produce byte-identical files (manifest determinism depends
on it).
"""

from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np


FORMAT_VERSION = 1


def canonical_json(obj: Any) -> str:
    """Serialize with sorted keys and no whitespace; stable under key reordering."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_tree(root: str | Path, exclude: tuple = ("run_manifest.json",)) -> str:
    """Content hash of a directory: sorted relative paths plus file bytes.

    Run manifests are excluded by default so an output tree hashes the same
    whether or not a previous run already stamped it.
    """
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        if path.name in exclude:
            continue
        h.update(path.relative_to(root).as_posix().encode())
        h.update(b"\x00")
        h.update(path.read_bytes())
        h.update(b"\x00")
    return h.hexdigest()


def config_hash(cfg_dict: dict) -> str:
    return sha256_bytes(canonical_json(cfg_dict).encode())


def write_json(path: str | Path, obj: Any) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def read_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text())


def write_f32(path: str | Path, arr: np.ndarray) -> None:
    """Raw little-endian float32, C order (channel-major for [C,H,W] maps)."""
    Path(path).write_bytes(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_f32(path: str | Path, shape: tuple[int, ...]) -> np.ndarray:
    data = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    expected = int(np.prod(shape))
    if data.size != expected:
        raise ValueError(f"{path}: expected {expected} float32 values, found {data.size}")
    return data.reshape(shape).copy()


def f32_to_b64(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def f32_from_b64(b64: str, shape: tuple[int, ...]) -> np.ndarray:
    data = np.frombuffer(base64.b64decode(b64), dtype="<f4")
    expected = int(np.prod(shape))
    if data.size != expected:
        raise ValueError(f"base64 float map: expected {expected} values, found {data.size}")
    return data.reshape(shape).copy()
