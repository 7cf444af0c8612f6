"""Binary checkpoint format.

Layout (little-endian): b"CBLD", u32 version, u64 profile hash, u32 tensor count,
then per tensor: u16 name length, UTF-8 name, u8 rank, u32 per dim, float32 data.
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"CBLD"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class ProfileMismatchError(CheckpointError):
    pass


def save_checkpoint(path, tensors: dict, profile_hash: int):
    parts = [MAGIC, struct.pack("<IQI", VERSION, profile_hash & (2 ** 64 - 1), len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4", copy=False).tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointCorruptError(f"truncated checkpoint: need {n} bytes at offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expected_hash: int | None = None):
    """Returns (tensors, profile_hash); tensors keep file order."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, not a CBLD checkpoint")
    (version,) = r.unpack("<I")
    if version > VERSION:
        raise CheckpointVersionError(f"{path}: format version {version} > supported {VERSION}")
    phash, count = r.unpack("<QI")
    if expected_hash is not None and phash != expected_hash:
        raise ProfileMismatchError(f"{path}: profile hash {phash:016x} != expected {expected_hash:016x}")
    tensors = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I")
        size = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(r.data):
        raise CheckpointCorruptError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return tensors, phash
