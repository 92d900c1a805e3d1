"""Symmetric per-row uniform quantization and int4 nibble packing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from convrot.errors import InvalidInputError, InvalidScaleError, InvalidValueError, RangeError

SUPPORTED_BITS = (4, 8)


@dataclass(frozen=True)
class QuantSpec:
    """Bit width of a symmetric quantizer with one scale per matrix row.

    Codes lie in ``[-qmax, qmax]`` with ``qmax = 2**(bits-1) - 1``; the most
    negative two's-complement code is never emitted.
    """

    bits: int = 4
    granularity: str = "per_row"

    def __post_init__(self) -> None:
        if self.bits not in SUPPORTED_BITS:
            raise RangeError(f"bits must be one of {SUPPORTED_BITS}, got {self.bits}")
        if self.granularity != "per_row":
            raise RangeError(f"unsupported granularity {self.granularity!r}")

    @property
    def qmax(self) -> int:
        return 2 ** (self.bits - 1) - 1


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    """Integer codes (int8 in memory, nibble-packed on disk for 4 bits) plus row scales."""

    codes: np.ndarray = field(repr=False)
    scales: np.ndarray = field(repr=False)
    bits: int

    def __post_init__(self) -> None:
        if self.codes.ndim != 2:
            raise InvalidInputError(f"codes must be 2-D, got shape {self.codes.shape}")
        if self.scales.shape != (self.codes.shape[0],):
            raise InvalidInputError(
                f"scales shape {self.scales.shape} does not match {self.codes.shape[0]} rows"
            )
        qmax = QuantSpec(self.bits).qmax
        if self.codes.size and int(np.abs(self.codes.astype(np.int16)).max()) > qmax:
            raise RangeError(f"codes exceed +-{qmax} for {self.bits}-bit tensor")
        if np.any(~(self.scales > 0)):
            raise InvalidScaleError("scales must be strictly positive")
        for name in ("codes", "scales"):
            a = np.array(getattr(self, name), dtype=np.int8 if name == "codes" else np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def shape(self) -> tuple[int, int]:
        return self.codes.shape  # type: ignore[return-value]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QuantizedTensor):
            return NotImplemented
        return (
            self.bits == other.bits
            and np.array_equal(self.codes, other.codes)
            and np.array_equal(self.scales, other.scales)
        )

    __hash__ = None  # type: ignore[assignment]


def _as_matrix(x: np.ndarray) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidInputError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def compute_scales(x: np.ndarray, spec: QuantSpec) -> np.ndarray:
    """Per-row ``max|x| / qmax``; all-zero rows get scale 1."""
    a = _as_matrix(x)
    if not np.all(np.isfinite(a)):
        raise InvalidValueError("cannot compute scales of non-finite values")
    if a.shape[1] == 0:
        return np.ones(a.shape[0])
    amax = np.abs(a).max(axis=1)
    # subnormal rows would otherwise underflow to a zero scale
    s = np.maximum(amax / spec.qmax, np.finfo(np.float64).smallest_subnormal)
    return np.where(amax > 0, s, 1.0)


def quantize(x: np.ndarray, scales: np.ndarray, spec: QuantSpec) -> QuantizedTensor:
    """``clamp(round_half_even(x / scale), -qmax, qmax)`` row by row."""
    a = _as_matrix(x)
    s = np.asarray(scales, dtype=np.float64)
    if s.shape != (a.shape[0],):
        raise InvalidScaleError(f"expected {a.shape[0]} scales, got shape {s.shape}")
    if np.any(~(s > 0)) or not np.all(np.isfinite(s)):
        raise InvalidScaleError("scales must be finite and strictly positive")
    if not np.all(np.isfinite(a)):
        raise InvalidValueError("cannot quantize non-finite values")
    q = np.clip(np.rint(a / s[:, None]), -spec.qmax, spec.qmax)
    return QuantizedTensor(q.astype(np.int8), s, spec.bits)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    return q.codes.astype(np.float64) * q.scales[:, None]


def pack_int4(codes: np.ndarray) -> bytes:
    """Two's-complement nibbles, element ``2t`` in the low nibble of byte ``t``.

    Odd lengths are padded with a zero high nibble.
    """
    c = np.asarray(codes).reshape(-1)
    if c.size and (c.min() < -8 or c.max() > 7):
        raise RangeError("int4 codes must lie in [-8, 7]")
    nib = (c.astype(np.int64) & 0xF).astype(np.uint8)
    if nib.size % 2:
        nib = np.append(nib, np.uint8(0))
    return (nib[0::2] | (nib[1::2] << 4)).astype(np.uint8).tobytes()


def unpack_int4(data: bytes, count: int) -> np.ndarray:
    """Inverse of :func:`pack_int4`; returns ``count`` int8 codes."""
    if count < 0 or len(data) < (count + 1) // 2:
        raise RangeError(f"{len(data)} bytes cannot hold {count} int4 codes")
    b = np.frombuffer(data, dtype=np.uint8, count=(count + 1) // 2)
    nib = np.empty(b.size * 2, dtype=np.uint8)
    nib[0::2] = b & 0xF
    nib[1::2] = b >> 4
    out = nib[:count].astype(np.int8)
    out[out > 7] -= 16
    return out
