"""Binary checkpoint format.

Layout (all little-endian): magic ``HGCL``, u32 format version, u32 m/n/d/k/L,
length-prefixed config snapshot, the external-id remap tables, then the named
parameter arrays in declared order, each preceded by a name + shape header.
Floats are always stored as 64-bit regardless of training precision, so a
save/load round trip is bit-identical.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"HGCL"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    m: int
    n: int
    dim: int
    rank: int
    layers: int
    config_text: str
    user_ids: np.ndarray
    item_ids: np.ndarray
    params: dict[str, np.ndarray]  # insertion order == declared order


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    parts: list[bytes] = [MAGIC,
                          struct.pack("<6I", VERSION, ckpt.m, ckpt.n,
                                      ckpt.dim, ckpt.rank, ckpt.layers)]
    cfg = ckpt.config_text.encode("utf-8")
    parts.append(struct.pack("<Q", len(cfg)))
    parts.append(cfg)
    for ids in (ckpt.user_ids, ckpt.item_ids):
        ids = np.asarray(ids, dtype="<i8")
        parts.append(struct.pack("<Q", ids.size))
        parts.append(ids.tobytes())
    parts.append(struct.pack("<I", len(ckpt.params)))
    for name, arr in ckpt.params.items():
        encoded = name.encode("utf-8")
        arr64 = np.asarray(arr, dtype="<f8")
        if not arr64.flags.c_contiguous:  # ascontiguousarray would drop 0-d shapes
            arr64 = np.ascontiguousarray(arr64)
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr64.ndim))
        parts.append(struct.pack(f"<{arr64.ndim}Q", *arr64.shape) if arr64.ndim else b"")
        parts.append(arr64.tobytes())
    path.write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> Checkpoint:
    reader = _Reader(Path(path).read_bytes())
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, m, n, dim, rank, layers = reader.unpack("<6I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (cfg_len,) = reader.unpack("<Q")
    config_text = reader.take(cfg_len).decode("utf-8")
    ids = []
    for _ in range(2):
        (count,) = reader.unpack("<Q")
        ids.append(np.frombuffer(reader.take(count * 8), dtype="<i8").copy())
    (n_arrays,) = reader.unpack("<I")
    params: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}Q") if ndim else ()
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(reader.take(count * 8), dtype="<f8").copy()
        params[name] = arr.reshape(shape) if ndim else arr.reshape(())
    if reader.pos != len(reader.data):
        raise CheckpointError(f"{path}: trailing bytes after parameter arrays")
    return Checkpoint(m=m, n=n, dim=dim, rank=rank, layers=layers,
                      config_text=config_text, user_ids=ids[0], item_ids=ids[1],
                      params=params)
