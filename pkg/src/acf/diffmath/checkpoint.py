"""ACFW parameter checkpoints.

Layout (little-endian): magic ``ACFW``, version ``u32``, then one section per
array until end of file: name length ``u16``, UTF-8 name, rank ``u8``,
dims ``u32 x rank``, float32 data in row-major order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ACFW"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"parameter name too long: {name[:40]}...")
        a = np.asarray(arr, dtype="<f4", order="C")
        if a.ndim > 255:
            raise CheckpointError(f"rank {a.ndim} too large for {name}")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}I", *a.shape))
        chunks.append(a.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    if len(buf) < 8:
        raise CheckpointError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 8
    out: dict[str, np.ndarray] = {}
    try:
        while pos < len(buf):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            nbytes = 4 * count
            if pos + nbytes > len(buf):
                raise CheckpointError(f"{path}: truncated data for {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(dims).copy()
            pos += nbytes
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated section header") from exc
    return out
