"""FCKP checkpoint files.

Layout (all integers little-endian)::

    magic        4 bytes   b"FCKP"
    version      u32       currently 1
    n_entries    u32
    entry * n_entries:
        name_len u32, name utf-8 bytes
        dtype    u8        1 = float64
        ndim     u32, dims u32 * ndim
        data     float64 * prod(dims), C order
    n_blobs      u32
    blob * n_blobs:
        name_len u32, name utf-8 bytes
        length   u64, payload bytes

Entries hold model parameters under their dotted paths and the AdamW
moments under ``optim.m.<path>`` / ``optim.v.<path>``. The ``state`` blob is
UTF-8 JSON (stage, step, config snapshot, vocabulary, loss trace, ...); the
``rng`` blob is UTF-8 JSON with the sampler's generator state.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..synth.dataset import atomic_write

MAGIC = b"FCKP"
VERSION = 1
DTYPE_F64 = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    entries: dict = field(default_factory=dict)  # name -> float64 array
    blobs: dict = field(default_factory=dict)  # name -> bytes

    def json_blob(self, name: str):
        return json.loads(self.blobs[name].decode("utf-8"))

    def set_json(self, name: str, obj) -> None:
        self.blobs[name] = json.dumps(obj, sort_keys=True).encode("utf-8")


def _name(name: str) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def encode(ckpt: Checkpoint) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(ckpt.entries))]
    for name in sorted(ckpt.entries):
        arr = np.asarray(ckpt.entries[name], dtype="<f8")  # tobytes() is C order
        out.append(_name(name))
        out.append(struct.pack("<BI", DTYPE_F64, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    out.append(struct.pack("<I", len(ckpt.blobs)))
    for name in sorted(ckpt.blobs):
        out.append(_name(name))
        out.append(struct.pack("<Q", len(ckpt.blobs[name])))
        out.append(ckpt.blobs[name])
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")


def decode(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("not an FCKP checkpoint")
    version, n_entries = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    ckpt = Checkpoint()
    for _ in range(n_entries):
        name = r.name()
        dtype, ndim = r.unpack("<BI")
        if dtype != DTYPE_F64:
            raise CheckpointError(f"{name}: unsupported dtype code {dtype}")
        dims = r.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(dims)
        ckpt.entries[name] = arr.astype(np.float64)
    (n_blobs,) = r.unpack("<I")
    for _ in range(n_blobs):
        name = r.name()
        (length,) = r.unpack("<Q")
        ckpt.blobs[name] = r.take(length)
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint")
    return ckpt


def save(path, ckpt: Checkpoint) -> None:
    """Write atomically (temporary file, then rename)."""
    atomic_write(path, encode(ckpt))


def load(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    return decode(path.read_bytes())
