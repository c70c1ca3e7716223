"""Binary tensor-bundle files for model checkpoints.

Layout (all integers little-endian):

    magic   4 bytes  b"AVCK"
    version u32      currently 1
    count   u32      number of tensors
    then per tensor, sorted by name:
    name_len u16, name utf-8 bytes,
    ndim     u8,  dims u32 each,
    payload  float64 little-endian, C order

Sorting by name makes the byte stream a pure function of the tensor map, so
identical training runs produce identical files.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = ["CheckpointError", "save_tensors", "load_tensors"]

MAGIC = b"AVCK"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise CheckpointError(f"tensor rank too high: {arr.ndim}")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            parts.append(struct.pack("<I", d))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_tensors(path) -> dict[str, np.ndarray]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(p))
    buf = p.read_bytes()
    off = 0

    def read(n: int) -> bytes:
        nonlocal off
        if off + n > len(buf):
            raise CheckpointError(f"truncated checkpoint {p} at byte {off}")
        chunk = buf[off : off + n]
        off += n
        return chunk

    if read(4) != MAGIC:
        raise CheckpointError(f"{p} is not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", read(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (count,) = struct.unpack("<I", read(4))

    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", read(2))
        name = read(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", read(1))
        shape = tuple(struct.unpack("<I", read(4))[0] for _ in range(ndim))
        n_items = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(read(8 * n_items), dtype="<f8").reshape(shape)
        out[name] = arr.astype(np.float64)
    if off != len(buf):
        raise CheckpointError(f"{p} has {len(buf) - off} trailing bytes")
    return out
