"""IDX binary arrays (the MNIST file format), plain or gzip-compressed.

Layout: two zero bytes, a dtype code, a dimension count, one big-endian u32
per dimension, then the row-major big-endian payload.
"""
from __future__ import annotations

import enum
import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    IdxDtypeError,
    IdxError,
    IdxMagicError,
    IdxTrailingDataError,
    IdxTruncatedError,
)


class IdxDtype(enum.IntEnum):
    U8 = 0x08
    I8 = 0x09
    I16 = 0x0B
    I32 = 0x0C
    F32 = 0x0D
    F64 = 0x0E

    @property
    def numpy(self) -> np.dtype:
        return np.dtype(_NUMPY[self])


_NUMPY = {
    IdxDtype.U8: ">u1",
    IdxDtype.I8: ">i1",
    IdxDtype.I16: ">i2",
    IdxDtype.I32: ">i4",
    IdxDtype.F32: ">f4",
    IdxDtype.F64: ">f8",
}
_BY_KIND = {np.dtype(v).newbyteorder("="): k for k, v in _NUMPY.items()}


@dataclass
class IdxArray:
    dtype: IdxDtype
    dims: tuple[int, ...]
    data: np.ndarray  # native byte order, shaped to dims

    def __post_init__(self):
        if math.prod(self.dims) != self.data.size:
            raise ValueError(f"dims {self.dims} do not match {self.data.size} values")


def parse_idx(buf: bytes) -> IdxArray:
    buf = memoryview(buf).cast("B")
    if len(buf) < 4:
        raise IdxTruncatedError(f"header needs 4 bytes, got {len(buf)}", len(buf))
    for pos in (0, 1):
        if buf[pos] != 0:
            raise IdxMagicError(f"magic byte {pos} is 0x{buf[pos]:02x}, expected 0x00", pos)
    try:
        dtype = IdxDtype(buf[2])
    except ValueError:
        raise IdxDtypeError(f"unknown dtype code 0x{buf[2]:02x}", 2) from None
    ndims = buf[3]
    if ndims == 0:
        raise IdxMagicError("dimension count is 0", 3)
    header = 4 + 4 * ndims
    if len(buf) < header:
        raise IdxTruncatedError(f"header declares {ndims} dims but stream ends early", len(buf))
    dims = struct.unpack(f">{ndims}I", buf[4:header])
    expected = math.prod(dims) * dtype.numpy.itemsize
    available = len(buf) - header
    if available < expected:
        raise IdxTruncatedError(
            f"truncated payload: need {expected} bytes for dims {list(dims)}, have {available}",
            len(buf),
        )
    if available > expected:
        raise IdxTrailingDataError(f"{available - expected} unexpected trailing bytes", header + expected)
    data = np.frombuffer(buf[header:], dtype=dtype.numpy).astype(dtype.numpy.newbyteorder("="))
    return IdxArray(dtype, tuple(dims), data.reshape(dims))


def encode_idx(arr: IdxArray | np.ndarray) -> bytes:
    """Inverse of :func:`parse_idx`. Accepts an ndarray of a supported dtype."""
    if isinstance(arr, np.ndarray):
        kind = _BY_KIND.get(arr.dtype.newbyteorder("="))
        if kind is None:
            raise ValueError(f"dtype {arr.dtype} has no IDX code")
        arr = IdxArray(kind, tuple(arr.shape), arr)
    if not 1 <= len(arr.dims) <= 255:
        raise ValueError(f"IDX supports 1..255 dims, got {len(arr.dims)}")
    head = bytes([0, 0, int(arr.dtype), len(arr.dims)]) + struct.pack(f">{len(arr.dims)}I", *arr.dims)
    return head + np.ascontiguousarray(arr.data, dtype=arr.dtype.numpy).tobytes()


def read_idx_bytes(path) -> bytes:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise DataError(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def read_idx(path) -> IdxArray:
    """Parse an IDX file; gzip compression is detected from the stream."""
    try:
        return parse_idx(read_idx_bytes(path))
    except IdxError as exc:
        exc.args = (f"{path}: {exc.args[0]}",)
        raise


def write_idx(path, arr, compress=None):
    path = Path(path)
    payload = encode_idx(arr)
    if compress if compress is not None else path.suffix == ".gz":
        payload = gzip.compress(payload, mtime=0)
    path.write_bytes(payload)
