"""Binary parameter checkpoints.

Layout (little-endian): magic ``b"BRIMCKPT"``, u32 format version, u32
record count, then per record: u32 name length, UTF-8 name, u32 ndim,
u64 dims, float64 data in C order.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"BRIMCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    """Write atomically: a partially written file never replaces a good one."""
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)


def load_arrays(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise CheckpointError(f"{path}: truncated")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {VERSION}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = take("<I")
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated")
        name = data[pos : pos + n].decode("utf-8")
        pos += n
        (ndim,) = take("<I")
        shape = take(f"<{ndim}Q")
        size = int(np.prod(shape, dtype=np.int64)) * 8
        if pos + size > len(data):
            raise CheckpointError(f"{path}: truncated")
        out[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=pos).reshape(shape).copy()
        pos += size
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return out


def save_module(path, module) -> None:
    save_arrays(path, module.state_dict())


def load_module(path, module) -> None:
    module.load_state_dict(load_arrays(path))
