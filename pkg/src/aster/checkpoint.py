"""Tensor container: a JSON manifest plus one row-major little-endian binary blob.

Layout of a container directory::

    manifest.json   {"format": "aster-tensors", "version": 1, "tensors": [...], "metadata": {...}}
    tensors.bin     concatenated raw tensor bytes, offsets recorded in the manifest
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import torch

from aster.errors import IncompatibleCheckpointError, MissingCheckpointError

FORMAT_TAG = "aster-tensors"
FORMAT_VERSION = 1
MANIFEST = "manifest.json"
BLOB = "tensors.bin"

_DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "int64": np.dtype("<i8"),
}


def _to_numpy(value: Any) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    arr = np.asarray(value)
    name = arr.dtype.name
    if name not in _DTYPES:
        raise TypeError(f"unsupported tensor dtype {arr.dtype}")
    # ascontiguousarray would promote 0-d arrays to 1-d
    return np.ascontiguousarray(arr.astype(_DTYPES[name], copy=False)).reshape(arr.shape)


def save_tensors(path: str | Path, tensors: Mapping[str, Any], metadata: Mapping[str, Any] | None = None) -> Path:
    """Write ``tensors`` (in iteration order) and JSON-serializable ``metadata`` to directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with (path / BLOB).open("wb") as fh:
        for name, value in tensors.items():
            arr = _to_numpy(value)
            raw = arr.tobytes(order="C")
            fh.write(raw)
            entries.append(
                {"name": name, "dtype": arr.dtype.name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
            )
            offset += len(raw)
    manifest = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "tensors": entries,
        "metadata": dict(metadata or {}),
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_manifest(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not (path / MANIFEST).is_file() or not (path / BLOB).is_file():
        raise MissingCheckpointError(f"no tensor container at {path}")
    manifest = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
    if manifest.get("format") != FORMAT_TAG:
        raise IncompatibleCheckpointError(f"{path}: unknown format tag {manifest.get('format')!r}")
    if manifest.get("version") != FORMAT_VERSION:
        raise IncompatibleCheckpointError(f"{path}: unsupported container version {manifest.get('version')}")
    return manifest


def load_tensors(path: str | Path) -> tuple[dict[str, torch.Tensor], dict[str, Any]]:
    path = Path(path)
    manifest = read_manifest(path)
    blob = (path / BLOB).read_bytes()
    tensors: dict[str, torch.Tensor] = {}
    for entry in manifest["tensors"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise IncompatibleCheckpointError(f"{path}: unsupported dtype {entry['dtype']!r}")
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        if stop > len(blob):
            raise IncompatibleCheckpointError(f"{path}: tensor {entry['name']!r} extends past end of blob")
        arr = np.frombuffer(blob[start:stop], dtype=dtype).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(arr.astype(dtype.newbyteorder("="), copy=True))
    return tensors, manifest["metadata"]
