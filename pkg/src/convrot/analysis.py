"""Outlier and error metrics, synthetic outlier tensors, rotation sweeps."""

from __future__ import annotations

import io
import math
from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np

from convrot._parallel import ordered_map
from convrot.errors import ConvRotError, InvalidInputError, InvalidValueError, RangeError
from convrot.pipeline import (
    GroupSize,
    RotationSpec,
    canonical_kind,
    forward,
    group_rotate,
    prepare_layer,
    reference_forward,
)
from convrot.quant import QuantSpec

# Recorded in every emitted manifest so seeded values can be reproduced.
PRNG = "numpy.random.PCG64/standard_normal/v1"
CSV_HEADER = "kind,group_size,outlier_after,reduction_pct"

SynthMode = Literal["rowwise", "colwise", "gaussian"]


@dataclass(frozen=True)
class ErrorReport:
    outlier_before: float
    outlier_after: float
    reduction_pct: float
    max_abs_error: float
    mse: float
    sqnr_db: float

    def to_json(self) -> dict:
        return {k: json_float(v) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class ErrorMetrics:
    max_abs_error: float
    mse: float
    sqnr_db: float


@dataclass(frozen=True)
class SweepConfig:
    kinds: tuple[str, ...] = ("sylvester", "regular")
    group_sizes: tuple[int, ...] = (16, 64, 256, 1024)
    include_global: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.kinds:
            raise InvalidInputError("sweep needs at least one rotation kind")
        if not self.group_sizes and not self.include_global:
            raise InvalidInputError("sweep needs at least one group size")
        object.__setattr__(self, "kinds", tuple(canonical_kind(k) for k in self.kinds))
        object.__setattr__(self, "group_sizes", tuple(int(g) for g in self.group_sizes))


@dataclass(frozen=True)
class SweepRow:
    kind: str
    group_size: GroupSize | None
    outlier_after: float | None
    reduction_pct: float | None
    error: str | None = None


@dataclass(frozen=True)
class SweepResult:
    original: float
    rows: tuple[SweepRow, ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        buf.write(f"original,,{fmt(self.original)},{fmt(0.0)}\n")
        for r in self.rows:
            gs = "" if r.group_size is None else str(r.group_size)
            if r.error is None:
                buf.write(f"{r.kind},{gs},{fmt(r.outlier_after)},{fmt(r.reduction_pct)}\n")
            else:
                buf.write(f"{r.kind},{gs},,\n")
        return buf.getvalue()


def fmt(v: float | None) -> str:
    if v is None:
        return ""
    if v == 0:
        v = 0.0  # no "-0"
    return format(v, ".10g")


def json_float(v: float) -> float | str:
    """JSON has no infinities; encode them as ``"+inf"`` / ``"-inf"`` sentinels."""
    if math.isinf(v):
        return "+inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return float(v)


def outlier_amplitude(x: np.ndarray) -> float:
    """Largest absolute entry over the whole tensor."""
    a = np.asarray(x, dtype=np.float64)
    if a.size == 0:
        raise InvalidInputError("outlier amplitude of an empty tensor")
    if not np.all(np.isfinite(a)):
        raise InvalidValueError("tensor contains NaN or Inf")
    return float(np.abs(a).max())


def reduction_pct(before: float, after: float) -> float:
    """Signed change in percent; negative means suppression."""
    if before <= 0:
        return 0.0
    return 100.0 * (after / before - 1.0)


def synth_outliers(
    rows: int,
    cols: int,
    mode: SynthMode = "gaussian",
    magnitude: float = 100.0,
    fraction: float = 0.01,
    seed: int = 0,
) -> np.ndarray:
    """Standard-normal base with a seeded subset of outlier rows or columns.

    ``colwise`` multiplies ``ceil(fraction * cols)`` columns by ``magnitude``.
    ``rowwise`` replaces ``ceil(fraction * rows)`` rows by ``magnitude * |base|``:
    row-wise outliers are same-signed rows of large magnitude, which is the
    pattern a constant-sum Hadamard column concentrates.
    """
    if rows < 1 or cols < 1:
        raise RangeError(f"rows and cols must be >= 1, got {rows}x{cols}")
    if not 0 < fraction <= 1:
        raise RangeError(f"fraction must lie in (0, 1], got {fraction}")
    if mode != "gaussian" and magnitude < 1:
        raise RangeError(f"magnitude must be >= 1, got {magnitude}")
    if mode not in ("rowwise", "colwise", "gaussian"):
        raise InvalidValueError(f"unknown synth mode {mode!r}")
    if not 0 <= seed < 2**64:
        raise RangeError(f"seed must be a 64-bit unsigned integer, got {seed}")
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.standard_normal((rows, cols))
    if mode == "rowwise":
        idx = np.sort(rng.choice(rows, size=math.ceil(fraction * rows), replace=False))
        x[idx] = magnitude * np.abs(x[idx])
    elif mode == "colwise":
        idx = np.sort(rng.choice(cols, size=math.ceil(fraction * cols), replace=False))
        x[:, idx] *= magnitude
    return x


def rotation_sweep(x: np.ndarray, cfg: SweepConfig) -> SweepResult:
    """Outlier amplitude after each (kind, group size) rotation.

    Rows follow config order: for every kind its group sizes, then the
    global row if requested. Invalid combinations yield an error row.
    """
    a = np.asarray(x, dtype=np.float64)
    original = outlier_amplitude(a)
    jobs: list[tuple[str, GroupSize]] = []
    for kind in cfg.kinds:
        jobs.extend((kind, g) for g in cfg.group_sizes)
        if cfg.include_global:
            jobs.append((kind, "global"))

    def run(job: tuple[str, GroupSize]) -> SweepRow:
        kind, g = job
        try:
            spec = RotationSpec(kind, g, seed=cfg.seed)
            after = outlier_amplitude(group_rotate(a, spec))
        except ConvRotError as e:
            return SweepRow(kind, g, None, None, str(e))
        return SweepRow(kind, g, after, reduction_pct(original, after))

    return SweepResult(original, tuple(ordered_map(run, jobs)))


def layer_error_report(y_ref: np.ndarray, y_quant: np.ndarray) -> ErrorMetrics:
    """Max abs error, MSE and SQNR in dB of ``y_quant`` against ``y_ref``.

    Zero error gives ``sqnr_db = +inf``.
    """
    r = np.asarray(y_ref, dtype=np.float64)
    q = np.asarray(y_quant, dtype=np.float64)
    if r.shape != q.shape:
        raise InvalidInputError(f"shape mismatch: {r.shape} vs {q.shape}")
    if r.size == 0:
        raise InvalidInputError("empty outputs")
    err = r - q
    noise = float(np.sum(err * err))
    signal = float(np.sum(r * r))
    if noise == 0:
        sqnr = math.inf
    elif signal == 0:
        sqnr = -math.inf
    else:
        sqnr = 10.0 * math.log10(signal / noise)
    return ErrorMetrics(float(np.abs(err).max()), noise / r.size, sqnr)


def quantized_layer_report(
    x: np.ndarray,
    w: np.ndarray,
    bias: np.ndarray | None,
    rotation: RotationSpec,
    wq: QuantSpec,
    aq: QuantSpec,
    name: str = "",
) -> tuple[ErrorReport, np.ndarray]:
    """Run the quantized layer against the float reference; returns report and output."""
    layer = prepare_layer(w, bias, rotation, wq, name)
    y_q = forward(x, layer, aq).values
    y_ref = reference_forward(x, w, bias).values
    before = outlier_amplitude(x)
    after = outlier_amplitude(group_rotate(x, rotation))
    m = layer_error_report(y_ref, y_q)
    report = ErrorReport(
        before, after, reduction_pct(before, after), m.max_abs_error, m.mse, m.sqnr_db
    )
    return report, y_q
