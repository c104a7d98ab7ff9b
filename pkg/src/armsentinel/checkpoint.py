"""Flat binary tensor container used for all checkpoints.

Layout: magic "ARMSNTL1", little-endian u32 tensor count, then per tensor:
u32 name length, UTF-8 name, u32 rank, u32 dims, raw little-endian float32
payload.  Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ARMSNTL1"


class CheckpointError(IOError):
    pass


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write named tensors; insertion order is preserved on disk."""
    chunks = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:8]!r}, expected {MAGIC!r}")
    pos = 8

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated at byte {pos} (need {n} more)")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        payload = take(4 * size)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes after last tensor")
    return tensors
