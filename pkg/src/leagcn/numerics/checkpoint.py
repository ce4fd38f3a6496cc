"""Named-tensor container: ``LEAT`` magic, version, then one record per tensor.

Layout (all little-endian): magic ``b"LEAT"``, u32 version, u64 record count;
each record is u32 name length, UTF-8 name, u32 rank, rank x u64 extents and
the row-major float64 payload.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"LEAT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<IQ", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    return b"".join(chunks)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a LEAT checkpoint (bad magic)")
    try:
        version, count = struct.unpack_from("<IQ", blob, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 16
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * size > len(blob):
                raise CheckpointError(f"truncated payload for '{name}'")
            out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last record")
    return out


def save(path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
