"""Group-wise rotation and the quantized linear layer.

The feature dimension K is cut into contiguous blocks of ``group_size``
columns and every block is right-multiplied by the same orthonormal matrix.
Rotating both activations and weights this way leaves ``X @ W.T`` unchanged,
while the rotated operands are easier to quantize. A reshape turns the
block rotation into one batched matmul, equivalent to a stride-N0
convolution with an N0-wide kernel.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Literal, Union

import numpy as np

from convrot import tensorio
from convrot._parallel import ordered_map, row_chunks
from convrot.errors import (
    BlockMismatchError,
    CapacityError,
    InvalidInputError,
    InvalidOrderError,
    InvalidValueError,
    RangeError,
)
from convrot.hadamard import (
    MAX_ORDER,
    is_power_of_four,
    is_power_of_two,
    random_orthogonal,
    regular,
    sylvester,
)
from convrot.quant import QuantizedTensor, QuantSpec, compute_scales, quantize

ROTATION_KINDS = ("none", "sylvester", "regular", "random_orthogonal")
KIND_ALIASES = {"standard": "sylvester", "random": "random_orthogonal", "identity": "none"}
INT32_LIMIT = 2**31

GroupSize = Union[int, Literal["global"]]


def canonical_kind(kind: str) -> str:
    k = KIND_ALIASES.get(kind.lower(), kind.lower())
    if k not in ROTATION_KINDS:
        raise InvalidValueError(
            f"unknown rotation kind {kind!r}; expected one of "
            f"{ROTATION_KINDS + tuple(KIND_ALIASES)}"
        )
    return k


@dataclass(frozen=True)
class RotationSpec:
    """Which block rotation to apply along the feature dimension.

    ``group_size="global"`` uses one block spanning all K columns.
    ``identity_tail`` leaves a trailing partial block unrotated instead of
    raising :class:`BlockMismatchError`.
    """

    kind: str = "regular"
    group_size: GroupSize = 256
    seed: int = 0
    identity_tail: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", canonical_kind(self.kind))
        gs = self.group_size
        if isinstance(gs, str):
            if gs != "global":
                raise InvalidOrderError(f"group_size must be an integer or 'global', got {gs!r}")
        elif isinstance(gs, bool) or not isinstance(gs, (int, np.integer)) or gs < 1:
            raise InvalidOrderError(f"group_size must be a positive integer, got {gs!r}")
        else:
            object.__setattr__(self, "group_size", int(gs))
            _check_kind_order(self.kind, int(gs))
        if not 0 <= self.seed < 2**64:
            raise InvalidValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def block_size(self, k: int) -> int:
        return k if self.group_size == "global" else int(self.group_size)


def _check_kind_order(kind: str, n: int) -> None:
    if kind == "sylvester" and not is_power_of_two(n):
        raise InvalidOrderError(f"sylvester rotation needs a power-of-two group, got {n}")
    if kind == "regular" and (n < 4 or not is_power_of_four(n)):
        raise InvalidOrderError(f"regular rotation needs a group of 4**k (k >= 1), got {n}")
    if kind in ("sylvester", "regular") and n > MAX_ORDER:
        raise InvalidOrderError(f"group size {n} exceeds the maximum order {MAX_ORDER}")


@lru_cache(maxsize=64)
def _block_matrix(kind: str, n: int, seed: int) -> np.ndarray:
    _check_kind_order(kind, n)
    if kind == "sylvester":
        r = sylvester(n).normalized()
    elif kind == "regular":
        r = regular(n).normalized()
    else:
        r = np.array(random_orthogonal(n, seed).entries)
    r.setflags(write=False)
    return r


def block_rotation(spec: RotationSpec, k: int) -> np.ndarray:
    """Orthonormal ``N0 x N0`` matrix applied to each block of a K-wide input."""
    if spec.kind == "none":
        raise InvalidValueError("rotation kind 'none' has no block matrix")
    return _block_matrix(spec.kind, spec.block_size(k), spec.seed)


@dataclass
class OpCounter:
    """Accumulates the multiply-adds actually issued by :func:`group_rotate`."""

    multiply_adds: int = 0


def group_rotate(
    x: np.ndarray, spec: RotationSpec, counter: OpCounter | None = None
) -> np.ndarray:
    """Right-multiply every ``N0``-column block of ``x`` by the block rotation."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidInputError(f"expected a 2-D matrix, got shape {a.shape}")
    if spec.kind == "none":
        return a.copy()
    m, k = a.shape
    n0 = spec.block_size(k)
    if spec.group_size == "global":
        _check_kind_order(spec.kind, k)
    full = (k // n0) * n0
    if full != k and not spec.identity_tail:
        raise BlockMismatchError(f"K={k} is not divisible by group size {n0}")
    r = block_rotation(spec, k)
    out = a.copy()
    if full:
        blocks = a[:, :full].reshape(m, full // n0, n0)
        out[:, :full] = (blocks @ r).reshape(m, full)
    if counter is not None:
        counter.multiply_adds += m * (full // n0) * n0 * n0
    return out


def rotate_weights(w: np.ndarray, spec: RotationSpec) -> np.ndarray:
    """Same block rotation applied to the K axis of an ``N x K`` weight matrix."""
    return group_rotate(w, spec)


@dataclass(frozen=True, eq=False)
class PreparedLayer:
    """Offline half of the quantized linear: rotated, quantized weights."""

    name: str
    rotation: RotationSpec
    weight_quant: QuantSpec
    weights: QuantizedTensor
    bias: np.ndarray | None = field(default=None, repr=False)

    @property
    def out_features(self) -> int:
        return self.weights.shape[0]

    @property
    def in_features(self) -> int:
        return self.weights.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PreparedLayer):
            return NotImplemented
        same_bias = (self.bias is None and other.bias is None) or (
            self.bias is not None
            and other.bias is not None
            and np.array_equal(self.bias, other.bias)
        )
        return (
            self.name == other.name
            and self.rotation == other.rotation
            and self.weight_quant == other.weight_quant
            and self.weights == other.weights
            and same_bias
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class LayerOutput:
    values: np.ndarray
    accumulators_checked: bool = True


def prepare_layer(
    w: np.ndarray,
    bias: np.ndarray | None = None,
    rotation: RotationSpec | None = None,
    wq: QuantSpec | None = None,
    name: str = "",
) -> PreparedLayer:
    rotation = rotation or RotationSpec("none")
    wq = wq or QuantSpec(4)
    wr = rotate_weights(w, rotation)
    q = quantize(wr, compute_scales(wr, wq), wq)
    b = None
    if bias is not None:
        b = np.array(bias, dtype=np.float64).reshape(-1)
        if b.shape != (q.shape[0],):
            raise InvalidInputError(f"bias length {b.size} does not match {q.shape[0]} outputs")
        b.setflags(write=False)
    return PreparedLayer(name, rotation, wq, q, b)


def check_capacity(k: int, bits_a: int, bits_b: int) -> None:
    bound = QuantSpec(bits_a).qmax * QuantSpec(bits_b).qmax * k
    if bound >= INT32_LIMIT:
        raise CapacityError(
            f"K={k} at {bits_a}x{bits_b} bits could reach |acc| = {bound} >= 2**31"
        )


def int_gemm(
    a_codes: np.ndarray, b_codes: np.ndarray, bits_a: int = 8, bits_b: int | None = None
) -> np.ndarray:
    """Exact ``a @ b.T`` on integer codes with int32 results.

    The overflow precondition ``qmax_a * qmax_b * K < 2**31`` is checked
    before any arithmetic; codes must lie in ``[-qmax, qmax]``.
    """
    bits_b = bits_a if bits_b is None else bits_b
    a = np.asarray(a_codes)
    b = np.asarray(b_codes)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise InvalidInputError(f"cannot multiply codes of shapes {a.shape} and {b.shape}.T")
    check_capacity(a.shape[1], bits_a, bits_b)
    for codes, bits in ((a, bits_a), (b, bits_b)):
        if codes.size and int(np.abs(codes.astype(np.int64)).max()) > QuantSpec(bits).qmax:
            raise RangeError(f"codes exceed the symmetric {bits}-bit range")
    a64 = a.astype(np.int64)
    bt = np.ascontiguousarray(b.astype(np.int64).T)
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.int32)
    # Integer sums are exact: the row split cannot change the result.
    def run(rows: slice) -> None:
        out[rows] = a64[rows] @ bt

    ordered_map(run, row_chunks(a.shape[0]))
    return out


def forward(x: np.ndarray, layer: PreparedLayer, aq: QuantSpec | None = None) -> LayerOutput:
    """Online half: rotate, per-token quantize, integer GEMM, dequantize, add bias."""
    aq = aq or QuantSpec(4)
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != layer.in_features:
        raise InvalidInputError(
            f"input shape {a.shape} does not match in_features={layer.in_features}"
        )
    xr = group_rotate(a, layer.rotation)
    qx = quantize(xr, compute_scales(xr, aq), aq)
    acc = int_gemm(qx.codes, layer.weights.codes, aq.bits, layer.weight_quant.bits)
    y = acc.astype(np.float64) * qx.scales[:, None] * layer.weights.scales[None, :]
    if layer.bias is not None:
        y = y + layer.bias[None, :]
    return LayerOutput(y, accumulators_checked=True)


def reference_forward(
    x: np.ndarray, w: np.ndarray, bias: np.ndarray | None = None
) -> LayerOutput:
    """Float64 ``x @ w.T (+ bias)`` accumulated in ascending k for every entry."""
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(w, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise InvalidInputError(f"cannot multiply shapes {a.shape} and {b.shape}.T")
    out = np.zeros((a.shape[0], b.shape[0]))
    for k in range(a.shape[1]):
        out += a[:, k, None] * b[None, :, k]
    if bias is not None:
        bv = np.asarray(bias, dtype=np.float64).reshape(-1)
        if bv.shape != (b.shape[0],):
            raise InvalidInputError(f"bias length {bv.size} does not match {b.shape[0]} outputs")
        out = out + bv[None, :]
    return LayerOutput(out, accumulators_checked=False)


LAYER_FORMAT = "convrot-layer/1"


def save_layer(layer: PreparedLayer, directory: str | Path) -> None:
    """Write codes, ``.scales.crt`` scales, optional bias and a JSON manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    codes_dtype = tensorio.DType.I4 if layer.weight_quant.bits == 4 else tensorio.DType.I8
    tensorio.write(d / "weights.crt", layer.weights.codes, codes_dtype)
    tensorio.write(d / "weights.scales.crt", layer.weights.scales, tensorio.DType.F32)
    if layer.bias is not None:
        tensorio.write(d / "bias.crt", layer.bias, tensorio.DType.F64)
    manifest = {
        "format": LAYER_FORMAT,
        "name": layer.name,
        "out_features": layer.out_features,
        "in_features": layer.in_features,
        "bits": layer.weight_quant.bits,
        "rotation": asdict(layer.rotation),
        "has_bias": layer.bias is not None,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_layer(directory: str | Path) -> PreparedLayer:
    """Inverse of :func:`save_layer`; scales come back rounded to float32."""
    d = Path(directory)
    m = json.loads((d / "manifest.json").read_text())
    if m.get("format") != LAYER_FORMAT:
        raise InvalidInputError(f"unsupported layer format {m.get('format')!r}")
    codes = tensorio.read(d / "weights.crt").data
    scales = tensorio.read(d / "weights.scales.crt").data.astype(np.float64)
    if codes.shape != (m["out_features"], m["in_features"]):
        raise InvalidInputError(f"weights shape {codes.shape} disagrees with manifest")
    bias = tensorio.read(d / "bias.crt").data if m["has_bias"] else None
    wq = QuantSpec(m["bits"])
    return PreparedLayer(
        m["name"],
        RotationSpec(**m["rotation"]),
        wq,
        QuantizedTensor(codes, scales, wq.bits),
        None if bias is None else np.array(bias, dtype=np.float64),
    )
