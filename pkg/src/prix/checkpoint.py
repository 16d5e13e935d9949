"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"PRIX"  u32 version  u32 array_count
    per array: u16 name_len, utf-8 name, u8 dtype tag (0 f32, 1 f64), u8 rank, u32 dims..., raw values
    u32 meta_len, utf-8 JSON {"config", "step", "anchor_provenance"} with sorted keys
"""
from __future__ import annotations

import json
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"PRIX"
VERSION = 1
_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_DTYPES = {v: k for k, v in _TAGS.items()}


class CheckpointFormatError(DataError):
    pass


@dataclass
class Checkpoint:
    arrays: "OrderedDict[str, np.ndarray]"
    config: dict
    step: int = 0
    anchor_provenance: str = "kmeans"
    meta: dict = field(default_factory=dict)


def encode(ckpt: Checkpoint) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(ckpt.arrays))]
    for name, arr in ckpt.arrays.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _TAGS:
            raise TypeError(f"array {name!r}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<BB", _TAGS[dt], arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    meta = {"config": ckpt.config, "step": int(ckpt.step), "anchor_provenance": ckpt.anchor_provenance}
    meta.update(ckpt.meta)
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out.append(struct.pack("<I", len(blob)) + blob)
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(f"truncated checkpoint at byte {self.pos} (need {n} more)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointFormatError("bad magic: not a PRIX checkpoint")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (n,) = r.unpack("<H")
        try:
            name = r.take(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointFormatError("array name is not valid UTF-8") from e
        tag, rank = r.unpack("<BB")
        if tag not in _DTYPES:
            raise CheckpointFormatError(f"array {name!r}: unknown dtype tag {tag}")
        dims = r.unpack(f"<{rank}I")
        dt = _DTYPES[tag]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        arrays[name] = np.frombuffer(r.take(nbytes), dtype=dt).reshape(dims).copy()
    (n,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"corrupt metadata block: {e}") from e
    if r.pos != len(data):
        raise CheckpointFormatError(f"{len(data) - r.pos} trailing bytes after metadata")
    return Checkpoint(arrays, meta.pop("config"), meta.pop("step"), meta.pop("anchor_provenance"), meta)


def save(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(encode(ckpt))
    os.replace(tmp, path)


def load(path: str | os.PathLike) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    return decode(data)
