"""Checkpoint container.

A checkpoint is a zip archive holding ``manifest.json`` and one ``.npy`` file
per tensor (little-endian). The manifest records the format version, the
package version, the training step, the serialized run config, a table
mapping each tensor path to its file, dtype and shape, and a JSON skeleton of
every non-tensor value (optimizer hyperparameters and the like).
"""

from __future__ import annotations

import io
import json
import os
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError, VersionError

CHECKPOINT_VERSION = 1
PACKAGE_VERSION = "sdwarp 0.1.0"


def _flatten(obj, prefix: str, tensors: dict):
    if isinstance(obj, torch.Tensor):
        tensors[prefix] = obj
        return {"__tensor__": prefix}
    if isinstance(obj, dict):
        return {"__dict__": [[k, _flatten(v, f"{prefix}/{k}", tensors)] for k, v in obj.items()]}
    if isinstance(obj, (list, tuple)):
        return {"__list__": [_flatten(v, f"{prefix}/{i}", tensors) for i, v in enumerate(obj)],
                "tuple": isinstance(obj, tuple)}
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    raise FormatError(f"cannot store value of type {type(obj).__name__} at {prefix}")


def _restore(node, tensors: dict):
    if isinstance(node, dict):
        if "__tensor__" in node:
            return tensors[node["__tensor__"]]
        if "__dict__" in node:
            return {k: _restore(v, tensors) for k, v in node["__dict__"]}
        if "__list__" in node:
            items = [_restore(v, tensors) for v in node["__list__"]]
            return tuple(items) if node.get("tuple") else items
    return node


def _le(arr: np.ndarray) -> np.ndarray:
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False)


def _entry(name: str) -> zipfile.ZipInfo:
    # fixed timestamp keeps identical checkpoints byte-identical
    return zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))


def save_checkpoint(path: str | Path, payload: dict, meta: dict) -> Path:
    """Write ``payload`` (nested dicts/lists of tensors and plain values) atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors: dict[str, torch.Tensor] = {}
    skeleton = _flatten(payload, "", tensors)
    table = {}
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w", zipfile.ZIP_STORED) as zf:
        for i, (name, t) in enumerate(tensors.items()):
            arr = _le(t.detach().cpu().numpy())
            buf = io.BytesIO()
            np.save(buf, arr, allow_pickle=False)
            fname = f"tensors/{i:05d}.npy"
            zf.writestr(_entry(fname), buf.getvalue())
            table[name] = {"file": fname, "dtype": arr.dtype.str, "shape": list(arr.shape)}
        manifest = {"format_version": CHECKPOINT_VERSION, "version": PACKAGE_VERSION,
                    "meta": meta, "tensors": table, "skeleton": skeleton}
        zf.writestr(_entry("manifest.json"), json.dumps(manifest, indent=1, sort_keys=True))
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | Path) -> tuple[dict, dict]:
    """Returns (payload, meta)."""
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"checkpoint not found: {path}")
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile:
        raise FormatError(f"{path} is not a checkpoint archive") from None
    with zf:
        try:
            manifest = json.loads(zf.read("manifest.json"))
        except KeyError:
            raise FormatError(f"{path}: manifest.json missing") from None
        if manifest.get("format_version") != CHECKPOINT_VERSION:
            raise VersionError(f"{path}: checkpoint format {manifest.get('format_version')} "
                               f"is not supported (expected {CHECKPOINT_VERSION})")
        tensors = {}
        for name, entry in manifest["tensors"].items():
            try:
                arr = np.load(io.BytesIO(zf.read(entry["file"])), allow_pickle=False)
            except KeyError:
                raise FormatError(f"{path}: tensor file {entry['file']} missing") from None
            if arr.dtype.str != entry["dtype"] or list(arr.shape) != entry["shape"]:
                raise FormatError(f"{path}: tensor {name} does not match its manifest entry")
            tensors[name] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True))
    return _restore(manifest["skeleton"], tensors), manifest["meta"]
