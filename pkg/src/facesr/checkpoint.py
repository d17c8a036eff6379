"""Checkpoint serialization.

One file: a JSON manifest line, a NUL separator, then a blob of flat
little-endian float32 arrays. The manifest records every array's name,
shape and byte offset into the blob, a fingerprint of the model
configuration, and small scalar state (step counters, RNG state) needed
for bitwise training resume.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import CheckpointError, FormatError
from .nn import ModelParams

_SEP = b"\n\x00"
_DTYPE = np.dtype("<f4")


def _collect(params: ModelParams, optim_state: dict[str, dict[str, np.ndarray]]
             ) -> list[tuple[str, np.ndarray]]:
    arrays = [(f"param.{k}", t.data) for k, t in params.items()]
    for section in sorted(optim_state):
        for k in sorted(optim_state[section]):
            arrays.append((f"{section}.{k}", optim_state[section][k]))
    return arrays


def save_checkpoint(path: str, params: ModelParams,
                    optim_state: dict[str, dict[str, np.ndarray]],
                    fingerprint: str, extra: dict | None = None):
    arrays = _collect(params, optim_state)
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays:
        raw = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "format": "facesr-checkpoint-v1",
        "fingerprint": fingerprint,
        "extra": extra or {},
        "arrays": entries,
    }
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(json.dumps(manifest, sort_keys=True).encode())
        f.write(_SEP)
        for raw in blobs:
            f.write(raw)
    os.replace(tmp, path)


def read_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a checkpoint into (manifest, name -> float32 array)."""
    with open(path, "rb") as f:
        data = f.read()
    sep = data.find(_SEP)
    if sep < 0:
        raise FormatError(f"{path}: missing manifest separator", offset=len(data))
    try:
        manifest = json.loads(data[:sep].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: malformed manifest: {e}", offset=0) from e
    if manifest.get("format") != "facesr-checkpoint-v1":
        raise FormatError(f"{path}: not a checkpoint file", offset=0)
    blob = data[sep + len(_SEP):]
    arrays = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * _DTYPE.itemsize
        if end > len(blob):
            raise FormatError(f"{path}: truncated blob for {entry['name']}",
                              offset=sep + len(_SEP) + start)
        arrays[entry["name"]] = np.frombuffer(blob[start:end], dtype=_DTYPE).reshape(shape).copy()
    return manifest, arrays


def load_checkpoint(path: str, params: ModelParams, fingerprint: str
                    ) -> tuple[dict[str, dict[str, np.ndarray]], dict]:
    """Restore parameters in place; returns (optimizer arrays, extra).

    The stored fingerprint and every array shape must match the live
    model, otherwise the checkpoint is rejected.
    """
    manifest, arrays = read_checkpoint(path)
    if manifest["fingerprint"] != fingerprint:
        raise CheckpointError(
            f"{path}: checkpoint fingerprint {manifest['fingerprint'][:12]}... does not "
            f"match model config {fingerprint[:12]}..."
        )
    param_arrays = {}
    optim_state: dict[str, dict[str, np.ndarray]] = {}
    for name, arr in arrays.items():
        section, _, key = name.partition(".")
        if section == "param":
            param_arrays[key] = arr
        else:
            optim_state.setdefault(section, {})[key] = arr
    expected = set(params.names())
    if set(param_arrays) != expected:
        raise CheckpointError(
            f"{path}: parameter names do not match the model "
            f"(missing={sorted(expected - set(param_arrays))[:3]}, "
            f"extra={sorted(set(param_arrays) - expected)[:3]})"
        )
    for k, t in params.items():
        if tuple(param_arrays[k].shape) != t.shape:
            raise CheckpointError(
                f"{path}: shape of {k} is {tuple(param_arrays[k].shape)}, model expects {t.shape}"
            )
    for k, t in params.items():
        t.data[...] = param_arrays[k].astype(t.data.dtype)
    return optim_state, manifest["extra"]
