"""NTB1 named-tensor binary checkpoints.

Layout (little-endian): magic b"NTB1"; u32 tensor count; per tensor u16 name
length, UTF-8 name, u8 rank, rank x u32 dims, prod(dims) x f32 row-major data.
Readers reject unknown magic and trailing bytes. Tensors are written sorted
by name so identical state yields identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"NTB1"


def dump_ntb1(tensors: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name!r}")
        if arr.ndim > 0xFF:
            raise ValueError(f"tensor rank {arr.ndim} exceeds format limit for '{name}'")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def parse_ntb1(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise ValueError(f"unknown checkpoint magic {blob[:4]!r} (expected {MAGIC!r})")
    pos = 4
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        if pos + 2 > len(blob):
            raise ValueError("truncated checkpoint: name length")
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        if pos + 1 > len(blob):
            raise ValueError(f"truncated checkpoint: rank of '{name}'")
        (rank,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        nbytes = 4 * n
        if pos + nbytes > len(blob):
            raise ValueError(f"truncated checkpoint: data of '{name}'")
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(dims)
        out[name] = arr.astype(np.float32)  # own the memory
        pos += nbytes
    if pos != len(blob):
        raise ValueError(f"trailing bytes in checkpoint: {len(blob) - pos} after {count} tensors")
    return out


def save_ntb1(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dump_ntb1(tensors))


def load_ntb1(path: str | Path) -> dict[str, np.ndarray]:
    return parse_ntb1(Path(path).read_bytes())
