"""Versioned binary checkpoint container.

Layout (little endian)::

    b"MFCK" | u32 version | u32 header_len | header (canonical JSON, UTF-8)
    u32 n_tensors
    per tensor: u16 name_len | name | u8 ndim | u64 * ndim shape | float64 data (row-major)

The header JSON is written with sorted keys and no whitespace, so
``save(load(b)) == b`` byte for byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MFCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    seed: int
    config: dict
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "config": self.config, "meta": self.meta}


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def to_bytes(ckpt: Checkpoint) -> bytes:
    head = _canonical(ckpt.header())
    parts = [MAGIC, struct.pack("<II", VERSION, len(head)), head, struct.pack("<I", len(ckpt.params))]
    for name, value in ckpt.params.items():
        raw = name.encode()
        arr = np.ascontiguousarray(value, dtype="<f8")
        parts.append(struct.pack("<HB", len(raw), arr.ndim) + raw)
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> Checkpoint:
    if buf[:4] != MAGIC:
        raise CheckpointError(f"not a checkpoint (magic {buf[:4]!r})")
    version, head_len = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    header = json.loads(buf[pos:pos + head_len])
    pos += head_len
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    params = {}
    for _ in range(count):
        name_len, ndim = struct.unpack_from("<HB", buf, pos)
        pos += 3
        name = buf[pos:pos + name_len].decode()
        pos += name_len
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes after last tensor")
    return Checkpoint(header["kind"], header["seed"], header["config"], params, header["meta"])


def save(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
