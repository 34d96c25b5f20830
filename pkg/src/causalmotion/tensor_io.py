"""Binary container for named arrays.

Layout (all integers little-endian):
    magic   4 bytes  b"CMDT"
    version u16      currently 1
    count   u32      number of entries
    entry*  name_len u16, name bytes (utf-8), dtype tag u8, rank u8,
            dims u64 * rank, raw little-endian payload

Dtype tags: f32=0, f64=1, i64=2. Round-trips are bit-exact.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ContainerError

MAGIC = b"CMDT"
VERSION = 1

_TAG_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_KIND_TO_TAG = {("f", 4): 0, ("f", 8): 1, ("i", 8): 2}


def write_tensors(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        tag = _KIND_TO_TAG.get((arr.dtype.kind, arr.dtype.itemsize))
        if tag is None:
            raise ContainerError(f"unsupported dtype {arr.dtype} for entry {name!r}", 0)
        name_b = name.encode("utf-8")
        if len(name_b) > 0xFFFF:
            raise ContainerError(f"entry name too long: {name!r}", 0)
        if arr.ndim > 0xFF:
            raise ContainerError(f"rank {arr.ndim} too large for entry {name!r}", 0)
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<BB", tag, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.astype(_TAG_TO_DTYPE[tag], copy=False).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_tensors(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    pos = 0

    def need(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise ContainerError(
                f"truncated container while reading {what}: expected {n} bytes, got {len(buf) - pos}",
                pos,
            )
        out = buf[pos : pos + n]
        pos += n
        return out

    if need(4, "magic") != MAGIC:
        raise ContainerError("bad magic (not a tensor container)", 0)
    version, count = struct.unpack("<HI", need(6, "header"))
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}", 4)

    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", need(2, "name length"))
        name = need(name_len, "name").decode("utf-8")
        tag, rank = struct.unpack("<BB", need(2, "dtype/rank"))
        dtype = _TAG_TO_DTYPE.get(tag)
        if dtype is None:
            raise ContainerError(f"unknown dtype tag {tag} for entry {name!r}", pos - 2)
        dims = struct.unpack(f"<{rank}Q", need(8 * rank, "dims"))
        n_bytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        payload = need(n_bytes, f"payload of {name!r}")
        if name in out:
            raise ContainerError(f"duplicate entry name {name!r}", pos - n_bytes)
        out[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    if pos != len(buf):
        raise ContainerError(f"{len(buf) - pos} trailing bytes after last entry", pos)
    return out
