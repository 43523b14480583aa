"""TCWU weight container.

Layout::

    b"TCWU" | u32 version | u32 manifest_len | manifest (UTF-8 JSON) | float32 data

All integers and floats are little-endian.  The manifest holds the model
config and, for each tensor, its hierarchical name, shape and byte offset
relative to the start of the data section.  Serialization is canonical, so
write -> read -> write reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ShapeError, WeightFileError
from .model import ModelConfig, ModelWeights, weights_from_tensors

MAGIC = b"TCWU"
VERSION = 1
_HEADER = struct.Struct("<4sII")


def to_bytes(weights: ModelWeights) -> bytes:
    entries = []
    blobs = []
    offset = 0
    for name, arr in weights.named_tensors():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps(
        {"config": weights.config.to_dict(), "tensors": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    return _HEADER.pack(MAGIC, VERSION, len(manifest)) + manifest + b"".join(blobs)


def read_manifest(buf: bytes) -> tuple[dict, int]:
    """Parse the header; return the manifest and the data section offset."""
    if len(buf) < _HEADER.size:
        raise WeightFileError("file too short for a TCWU header")
    magic, version, mlen = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise WeightFileError(f"bad magic {magic!r}")
    if version != VERSION:
        raise WeightFileError(f"unsupported container version {version}")
    start = _HEADER.size + mlen
    if start > len(buf):
        raise WeightFileError("manifest extends past end of file")
    try:
        manifest = json.loads(buf[_HEADER.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFileError(f"unreadable manifest: {exc}") from exc
    if not isinstance(manifest, dict) or "config" not in manifest or "tensors" not in manifest:
        raise WeightFileError("manifest lacks config/tensors")
    return manifest, start


def from_bytes(buf: bytes) -> ModelWeights:
    manifest, start = read_manifest(buf)
    data = memoryview(buf)[start:]
    tensors = {}
    for entry in manifest["tensors"]:
        try:
            name, shape, off = entry["name"], tuple(entry["shape"]), int(entry["offset"])
        except (KeyError, TypeError) as exc:
            raise WeightFileError(f"bad tensor entry {entry!r}") from exc
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if off < 0 or off + nbytes > len(data):
            raise WeightFileError(f"tensor {name!r} lies outside the data section")
        tensors[name] = np.frombuffer(data[off:off + nbytes], dtype="<f4").astype(np.float32).reshape(shape)
    try:
        config = ModelConfig.from_dict(manifest["config"])
        return weights_from_tensors(config, tensors)
    except (ConfigError, ShapeError, DataError, TypeError) as exc:
        raise WeightFileError(str(exc)) from exc


def save_weights(weights: ModelWeights, path) -> None:
    Path(path).write_bytes(to_bytes(weights))


def load_weights(path) -> ModelWeights:
    return from_bytes(Path(path).read_bytes())
