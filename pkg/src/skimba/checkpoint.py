"""SKBA checkpoint container.

Layout (little-endian): ``b"SKBA"``, u32 version, u32 entry count, then per
entry: u32 name length, UTF-8 name, u32 rank, rank x u64 extents, raw f32
values in row-major order.
"""
from __future__ import annotations

import io
import os
import struct
from typing import Mapping

import numpy as np

MAGIC = b"SKBA"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(entries: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(entries)))
    for name, value in entries.items():
        arr = np.asarray(value)
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not an SKBA checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported SKBA version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}Q", blob, off)
            off += 8 * rank
            n = int(np.prod(shape, dtype=np.int64))
            if off + 4 * n > len(blob):
                raise CheckpointError(f"truncated entry {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape).astype(np.float32)
            off += 4 * n
    except struct.error as exc:
        raise CheckpointError(f"truncated SKBA checkpoint: {exc}") from None
    if name_dupes := count - len(out):
        raise CheckpointError(f"{name_dupes} duplicate entry names")
    return out


def save(path: str | os.PathLike, entries: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(entries))


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())
