"""Checkpoint files: one JSON header line, then raw little-endian float32 tensors.

Header: {"format_version": 1, "tensors": [{"name", "shape", "offset"}, ...], "meta": {...}}
Offsets are byte offsets into the payload that follows the header's newline.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn.depaudionet import BUFFER_NAMES, PARAM_SHAPES, DepAudioNetParams

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: DepAudioNetParams
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, params: DepAudioNetParams, meta: dict | None = None) -> Path:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    table, blobs, offset = [], [], 0
    for name, arr in params.arrays().items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        table.append({"name": name, "shape": list(data.shape), "offset": offset})
        blobs.append(data.tobytes())
        offset += data.nbytes
    header = {"format_version": FORMAT_VERSION, "tensors": table, "meta": meta or {}}
    line = json.dumps(header, sort_keys=True).encode() + b"\n"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(line)
            for b in blobs:
                fh.write(b)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path) -> Checkpoint:
    """Parse and validate fully before building any parameter object."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path}: missing header terminator")
    try:
        header = json.loads(raw[:nl])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupted header ({exc})") from None
    if not isinstance(header, dict) or "format_version" not in header or "tensors" not in header:
        raise CheckpointError(f"{path}: corrupted header (missing keys)")
    if header["format_version"] != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {header['format_version']!r}")
    payload = raw[nl + 1 :]
    arrays, expected = {}, 0
    for entry in header["tensors"]:
        try:
            name, shape, offset = entry["name"], tuple(int(s) for s in entry["shape"]), int(entry["offset"])
        except (KeyError, TypeError, ValueError):
            raise CheckpointError(f"{path}: malformed tensor table entry {entry!r}") from None
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset != expected:
            raise CheckpointError(f"{path}: tensor {name} offset {offset} inconsistent (expected {expected})")
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload in tensor {name}")
        arrays[name] = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape)
        expected += nbytes
    if expected != len(payload):
        raise CheckpointError(f"{path}: payload has {len(payload) - expected} trailing bytes")
    required = set(PARAM_SHAPES) | set(BUFFER_NAMES)
    if required - arrays.keys():
        raise CheckpointError(f"{path}: missing tensors {sorted(required - arrays.keys())}")
    for name, shape in PARAM_SHAPES.items():
        if arrays[name].shape != shape:
            raise CheckpointError(f"{path}: tensor {name} has shape {arrays[name].shape}, expected {shape}")
    params = DepAudioNetParams.from_arrays({k: v.astype(np.float32) for k, v in arrays.items()})
    return Checkpoint(params, header.get("meta", {}))
