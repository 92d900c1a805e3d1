"""Minimal little-endian binary tensor format (``.crt``).

Layout::

    magic   4 bytes   b"CRT1"
    dtype   1 byte    0=f32 1=f64 2=i8 3=packed-i4
    ndim    1 byte    >= 1
    dims    ndim x u64 little-endian
    payload row-major little-endian values

Packed-i4 rows (the last axis) are nibble-packed with :func:`pack_int4` and
each row is padded to a whole byte with a zero nibble.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from math import prod
from pathlib import Path

import numpy as np

from convrot.errors import FormatError, RangeError
from convrot.quant import pack_int4, unpack_int4

MAGIC = b"CRT1"
HEADER_FIXED = 6


class DType(enum.IntEnum):
    F32 = 0
    F64 = 1
    I8 = 2
    I4 = 3


_NUMPY = {DType.F32: "<f4", DType.F64: "<f8", DType.I8: "i1"}


@dataclass(frozen=True, eq=False)
class Tensor:
    data: np.ndarray
    dtype: DType

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.dtype == other.dtype and encode(self.data, self.dtype) == encode(
            other.data, other.dtype
        )

    __hash__ = None  # type: ignore[assignment]


def _row_bytes(cols: int) -> int:
    return (cols + 1) // 2


def payload_size(dims: tuple[int, ...], dtype: DType) -> int:
    if dtype == DType.I4:
        return prod(dims[:-1]) * _row_bytes(dims[-1])
    return prod(dims) * np.dtype(_NUMPY[dtype]).itemsize


def encode(array: np.ndarray, dtype: DType | int | str = DType.F32) -> bytes:
    dtype = parse_dtype(dtype)
    a = np.asarray(array)
    if a.ndim == 0:
        raise FormatError("scalars (ndim=0) are not representable")
    if a.ndim > 255:
        raise FormatError(f"ndim {a.ndim} exceeds 255")
    header = MAGIC + struct.pack("<BB", int(dtype), a.ndim)
    header += struct.pack(f"<{a.ndim}Q", *a.shape)
    if dtype == DType.I4:
        cols = a.shape[-1]
        rows = a.reshape(-1, cols) if cols else a.reshape(prod(a.shape[:-1]), 0)
        payload = b"".join(pack_int4(r) for r in rows)
    else:
        if dtype == DType.I8:
            if a.size and (a.min() < -128 or a.max() > 127):
                raise RangeError("values do not fit in int8")
            if not np.issubdtype(a.dtype, np.integer):
                raise RangeError("i8 tensors need integer input")
        payload = np.ascontiguousarray(a, dtype=_NUMPY[dtype]).tobytes()
    return header + payload


def decode(buf: bytes) -> Tensor:
    if len(buf) < HEADER_FIXED:
        raise FormatError(f"truncated header: {len(buf)} bytes", offset=len(buf))
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}", offset=0)
    code, ndim = buf[4], buf[5]
    try:
        dtype = DType(code)
    except ValueError:
        raise FormatError(f"unknown dtype code {code}", offset=4) from None
    if ndim == 0:
        raise FormatError("ndim must be at least 1", offset=5)
    dims_end = HEADER_FIXED + 8 * ndim
    if len(buf) < dims_end:
        raise FormatError("truncated dims", offset=len(buf))
    dims = struct.unpack_from(f"<{ndim}Q", buf, HEADER_FIXED)
    for i, d in enumerate(dims):
        if d >= 2**63:
            raise FormatError(f"dim {i} = {d} exceeds 2**63", offset=HEADER_FIXED + 8 * i)
    need = payload_size(dims, dtype)
    have = len(buf) - dims_end
    if have < need:
        raise FormatError(f"truncated payload: need {need} bytes, have {have}", offset=len(buf))
    if have > need:
        raise FormatError(f"{have - need} trailing bytes after payload", offset=dims_end + need)
    body = buf[dims_end:]
    if dtype != DType.I4:
        data = np.frombuffer(body, dtype=_NUMPY[dtype]).reshape(dims)
        return Tensor(data.astype(data.dtype.newbyteorder("=")), dtype)
    cols = dims[-1]
    rb = _row_bytes(cols)
    nrows = prod(dims[:-1])
    out = np.empty((nrows, cols), dtype=np.int8)
    for r in range(nrows):
        chunk = body[r * rb : (r + 1) * rb]
        if cols % 2 and chunk[-1] >> 4:
            raise FormatError("nonzero pad nibble", offset=dims_end + (r + 1) * rb - 1)
        out[r] = unpack_int4(chunk, cols)
    return Tensor(out.reshape(dims), dtype)


def parse_dtype(dtype: DType | int | str) -> DType:
    if isinstance(dtype, str):
        names = {"f32": DType.F32, "f64": DType.F64, "i8": DType.I8, "i4": DType.I4}
        try:
            return names[dtype.lower()]
        except KeyError:
            raise FormatError(f"unknown dtype name {dtype!r}") from None
    return DType(dtype)


def write(path: str | Path, array: np.ndarray, dtype: DType | int | str = DType.F32) -> None:
    Path(path).write_bytes(encode(array, dtype))


def read(path: str | Path) -> Tensor:
    return decode(Path(path).read_bytes())
