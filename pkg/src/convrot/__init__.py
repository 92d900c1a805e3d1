"""Group-wise regular Hadamard rotation quantization on CPU.

Builds Hadamard rotation matrices, runs an exact W4A4/W8A8 integer linear
pipeline with block-wise rotations, and reports outlier and error metrics.
"""

from convrot.errors import (
    BlockMismatchError,
    CapacityError,
    ConvRotError,
    FormatError,
    InvalidInputError,
    InvalidOrderError,
    InvalidScaleError,
    InvalidValueError,
    PolicyError,
    RangeError,
)
from convrot.hadamard import (
    DiscrepancySummary,
    HadamardMatrix,
    OrthogonalMatrix,
    discrepancy_summary,
    fwht,
    kronecker,
    random_orthogonal,
    regular,
    sylvester,
)
from convrot.pipeline import (
    LayerOutput,
    PreparedLayer,
    RotationSpec,
    forward,
    group_rotate,
    int_gemm,
    prepare_layer,
    reference_forward,
    rotate_weights,
)
from convrot.quant import (
    QuantizedTensor,
    QuantSpec,
    compute_scales,
    dequantize,
    pack_int4,
    quantize,
    unpack_int4,
)

__version__ = "0.1.0"

__all__ = [
    "BlockMismatchError",
    "CapacityError",
    "ConvRotError",
    "DiscrepancySummary",
    "FormatError",
    "HadamardMatrix",
    "InvalidInputError",
    "InvalidOrderError",
    "InvalidScaleError",
    "InvalidValueError",
    "LayerOutput",
    "OrthogonalMatrix",
    "PolicyError",
    "PreparedLayer",
    "QuantSpec",
    "QuantizedTensor",
    "RangeError",
    "RotationSpec",
    "compute_scales",
    "dequantize",
    "discrepancy_summary",
    "forward",
    "fwht",
    "group_rotate",
    "int_gemm",
    "kronecker",
    "pack_int4",
    "prepare_layer",
    "quantize",
    "random_orthogonal",
    "reference_forward",
    "regular",
    "rotate_weights",
    "sylvester",
    "unpack_int4",
]
