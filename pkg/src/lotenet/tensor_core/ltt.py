"""LTT binary tensor records.

Layout: ``b"LTT1"``, uint32 rank, ``rank`` uint32 extents, then the elements
as float32, all little-endian and row-major, with no padding.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from ..errors import FormatError

MAGIC = b"LTT1"
_U32 = struct.Struct("<I")


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated LTT record: expected {n} bytes of {what}, got {len(buf)}")
    return buf


def write_ltt(fh: BinaryIO, array) -> int:
    """Append one record to an open binary stream; returns bytes written."""
    arr = np.array(array, dtype="<f4", order="C")  # keeps rank 0, unlike ascontiguousarray
    header = MAGIC + _U32.pack(arr.ndim) + b"".join(_U32.pack(s) for s in arr.shape)
    payload = arr.tobytes(order="C")
    fh.write(header)
    fh.write(payload)
    return len(header) + len(payload)


def read_ltt(fh: BinaryIO) -> np.ndarray:
    """Read one record from an open binary stream as a float32 array."""
    magic = fh.read(4)
    if magic != MAGIC:
        if len(magic) < 4:
            raise FormatError("truncated LTT record: missing magic bytes")
        raise FormatError(f"bad LTT magic {magic!r}, expected {MAGIC!r}")
    (rank,) = _U32.unpack(_read_exact(fh, 4, "rank"))
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "extents")) if rank else ()
    count = int(np.prod(dims, dtype=np.int64))
    data = _read_exact(fh, 4 * count, "elements")
    return np.frombuffer(data, dtype="<f4").reshape(dims).astype(np.float32)


def save_ltt(path: str | Path, array) -> None:
    with open(path, "wb") as fh:
        write_ltt(fh, array)


def load_ltt(path: str | Path) -> np.ndarray:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise FormatError(f"cannot open LTT file {path}: {exc.strerror}") from None
    with fh:
        arr = read_ltt(fh)
        if fh.read(1):
            raise FormatError(f"trailing bytes after LTT record in {path}")
    return arr
