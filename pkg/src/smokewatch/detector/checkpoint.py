"""Binary checkpoint format for detector models.

Layout: magic "SMKW", little-endian u32 format version, u32 metadata byte
length, UTF-8 JSON metadata (config echo plus a parameter manifest with
names, shapes, and byte offsets into the data section), then the raw
little-endian float32 parameter arrays in manifest order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import DetectorConfig
from .model import SmokeDetector

MAGIC = b"SMKW"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


def save_model(model: SmokeDetector, path: str | Path) -> None:
    manifest = []
    blobs = []
    offset = 0
    for p in model.params:
        arr = np.ascontiguousarray(p.value, dtype="<f4")
        manifest.append({"name": p.name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    meta = json.dumps(
        {"config": model.config.to_dict(), "params": manifest, "data_bytes": offset}
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)
        for blob in blobs:
            f.write(blob)


def load_model(path: str | Path) -> SmokeDetector:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a detector checkpoint (bad magic)")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: format version {version} not supported (expected {FORMAT_VERSION})"
        )
    meta_len = struct.unpack("<I", raw[8:12])[0]
    if len(raw) < 12 + meta_len:
        raise CorruptCheckpointError(f"{path}: truncated metadata")
    try:
        meta = json.loads(raw[12 : 12 + meta_len].decode("utf-8"))
        config = DetectorConfig.from_dict(meta["config"])
        manifest = meta["params"]
    except (ValueError, KeyError, TypeError) as e:
        raise CorruptCheckpointError(f"{path}: invalid metadata ({e})") from e

    data = raw[12 + meta_len :]
    if len(data) < meta.get("data_bytes", 0):
        raise CorruptCheckpointError(
            f"{path}: truncated data section ({len(data)} of {meta['data_bytes']} bytes)"
        )
    model = SmokeDetector(config)
    values = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * 4
        if end > len(data):
            raise CorruptCheckpointError(f"{path}: parameter {entry['name']!r} out of bounds")
        values[entry["name"]] = np.frombuffer(data[start:end], dtype="<f4").reshape(shape).copy()
    expected = set(model.params.names())
    if expected != set(values):
        raise CorruptCheckpointError(
            f"{path}: parameter manifest does not match the configured model"
        )
    model.params.load_values(values)
    return model
