"""SRT binary tensor files.

Layout: magic ``b"SRT1"``, u8 dtype code (0 = float32, 1 = float64), u8 rank,
``rank`` little-endian u32 extents, then the raw little-endian row-major
payload.
"""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from .errors import DataError

MAGIC = b"SRT1"
_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_KINDS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def to_bytes(array) -> bytes:
    a = np.asarray(array)
    if a.dtype not in _KINDS:
        raise TypeError(f"SRT stores float32/float64 only, got {a.dtype}")
    if a.ndim > 255:
        raise ValueError("rank too large for SRT")
    code = _KINDS[a.dtype]
    head = MAGIC + struct.pack("<BB", code, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + np.ascontiguousarray(a, dtype=_CODES[code]).tobytes()


def read_from(f) -> np.ndarray:
    """Read one SRT record from a binary stream positioned at its magic."""
    magic = f.read(4)
    if magic != MAGIC:
        raise DataError(f"bad SRT magic {magic!r}")
    head = f.read(2)
    if len(head) != 2:
        raise DataError("truncated SRT header")
    code, rank = struct.unpack("<BB", head)
    if code not in _CODES:
        raise DataError(f"unknown SRT dtype code {code}")
    raw = f.read(4 * rank)
    if len(raw) != 4 * rank:
        raise DataError("truncated SRT extents")
    shape = struct.unpack(f"<{rank}I", raw)
    dt = _CODES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    payload = f.read(nbytes)
    if len(payload) != nbytes:
        raise DataError(f"truncated SRT payload: expected {nbytes} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))


def from_bytes(buf: bytes) -> np.ndarray:
    return read_from(io.BytesIO(buf))


def save(path: str | os.PathLike, array) -> None:
    with open(path, "wb") as f:
        f.write(to_bytes(array))


def load(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        return read_from(f)
