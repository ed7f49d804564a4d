"""Number formats: minifloat scalars, MX block quantization, FWHT, tensor files."""

from .dataformat import FP_SETTINGS, DataFormat, FormatKind
from .fileio import load_mx_tensor, save_mx_tensor
from .hadamard import fwht
from .kernels import HAVE_EXT
from .minifloat import (
    cast_minifloat,
    decode_minifloat,
    encode_minifloat,
    minifloat_bias,
    minifloat_max,
    minifloat_min_normal,
    minifloat_min_subnormal,
)
from .mx import (
    MXTensor,
    dequantize_block,
    dequantize_blocks,
    quantize_block,
    quantize_blocks,
    scale_exponents,
)

__all__ = [
    "FP_SETTINGS",
    "DataFormat",
    "FormatKind",
    "HAVE_EXT",
    "MXTensor",
    "cast_minifloat",
    "decode_minifloat",
    "dequantize_block",
    "dequantize_blocks",
    "encode_minifloat",
    "fwht",
    "load_mx_tensor",
    "minifloat_bias",
    "minifloat_max",
    "minifloat_min_normal",
    "minifloat_min_subnormal",
    "quantize_block",
    "quantize_blocks",
    "save_mx_tensor",
    "scale_exponents",
]
