"""Binary checkpoints: JSON manifest + raw float64 tensors + mask bitmaps.

Layout:

    8 bytes   magic "MGPPCKPT"
    8 bytes   manifest length, little-endian uint64
    ...       manifest JSON: {"format_version": 1,
                              "tensors": [{"name", "shape", "prunable"}, ...]}
    per tensor, in manifest order:
        size*8 bytes of little-endian float64 (row-major)
        ceil(size/8) bytes of mask bits (numpy packbits order, 1 = keep)

Everything is deterministic given the store, so identical stores produce
byte-identical files.
"""

from __future__ import annotations

import json
import math
import struct

import numpy as np

from .params import ParamStore

MAGIC = b"MGPPCKPT"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(store: ParamStore, path) -> None:
    manifest = {
        "format_version": FORMAT_VERSION,
        "tensors": [{"name": name, "shape": list(p.value.shape),
                     "prunable": bool(p.prunable)}
                    for name, p in store.items()],
    }
    blob = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, p in store.items():
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
            fh.write(np.packbits(p.mask.ravel()).tobytes())


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path) -> ParamStore:
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC), "magic") != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file (bad magic)")
        (blob_len,) = struct.unpack("<Q", _read_exact(fh, 8, "manifest length"))
        try:
            manifest = json.loads(_read_exact(fh, blob_len, "manifest"))
        except json.JSONDecodeError as exc:
            raise CheckpointError("corrupt checkpoint manifest") from exc
        version = manifest.get("format_version")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format_version "
                                  f"{version!r}")
        store = ParamStore()
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            size = math.prod(shape)
            raw = _read_exact(fh, size * 8, f"tensor {entry['name']}")
            value = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
            raw = _read_exact(fh, math.ceil(size / 8), f"mask {entry['name']}")
            bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8),
                                 count=size)
            p = store.add(entry["name"], value, bool(entry["prunable"]))
            p.mask = bits.astype(bool).reshape(shape)
        if fh.read(1):
            raise CheckpointError("trailing bytes after last tensor")
    return store
