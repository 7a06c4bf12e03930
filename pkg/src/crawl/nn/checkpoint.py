"""Checkpoints: ``manifest.json`` (names, shapes, dtypes) plus one raw little-endian blob per array."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def _blob_name(name: str) -> str:
    return name.replace("/", "_") + ".bin"


def save_checkpoint(
    directory: str | Path,
    arrays: dict[str, np.ndarray],
    meta: dict | None = None,
    dtype: str = "float32",
) -> Path:
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported checkpoint dtype {dtype!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        blob = _blob_name(name)
        (directory / blob).write_bytes(raw)
        entries.append(
            {
                "name": name,
                "shape": list(np.shape(arr)),
                "dtype": dtype,
                "file": blob,
                "sha256": hashlib.sha256(raw).hexdigest(),
            }
        )
    manifest = {"version": FORMAT_VERSION, "arrays": entries, "meta": meta or {}}
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_checkpoint(directory: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')!r}")
    arrays = {}
    for entry in manifest["arrays"]:
        raw = (directory / entry["file"]).read_bytes()
        if hashlib.sha256(raw).hexdigest() != entry["sha256"]:
            raise ValueError(f"checksum mismatch for {entry['name']}")
        arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return arrays, manifest.get("meta", {})
