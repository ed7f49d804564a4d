"""Minifloat (ExMy) scalar codec.

Layout: 1 sign bit, x exponent bits, y mantissa bits. Bias 2^(x-1)-1,
exponent field 0 means subnormal. Every bit pattern decodes to a finite
value: there are no inf/NaN encodings, overflow saturates to the largest
finite magnitude. This is the element grid of the FP datapath and of the
MXFP block formats.
"""

import numpy as np

from . import kernels


def minifloat_bias(exp_bits: int) -> int:
    return (1 << (exp_bits - 1)) - 1


def minifloat_max(exp_bits: int, man_bits: int) -> float:
    emax = ((1 << exp_bits) - 1) - minifloat_bias(exp_bits)
    return (2.0 - 2.0 ** -man_bits) * 2.0 ** emax


def minifloat_min_normal(exp_bits: int) -> float:
    return 2.0 ** (1 - minifloat_bias(exp_bits))


def minifloat_min_subnormal(exp_bits: int, man_bits: int) -> float:
    return 2.0 ** (1 - minifloat_bias(exp_bits) - man_bits)


def cast_minifloat(x, exp_bits: int, man_bits: int) -> np.ndarray:
    """Round values onto the ExMy grid (RNE, saturating, NaN is an error)."""
    return kernels.cast_minifloat(x, exp_bits, man_bits)


def encode_minifloat(x, exp_bits: int, man_bits: int) -> np.ndarray:
    """Bit patterns (uint16) for values; off-grid values are cast first."""
    v = cast_minifloat(x, exp_bits, man_bits)
    bias = minifloat_bias(exp_bits)
    emin = 1 - bias
    sign = np.signbit(v).astype(np.uint16)
    u = np.abs(v)
    _, ex = np.frexp(u)
    ereal = ex - 1  # floor(log2 u) for grid values
    sub = u < np.ldexp(1.0, emin)
    efield = np.where(sub, 0, ereal - emin + 1).astype(np.int64)
    q = np.ldexp(1.0, np.where(sub, emin, ereal) - man_bits)
    m = np.rint(u / q).astype(np.int64)
    m = np.where(sub, m, m - (1 << man_bits))
    code = (
        (sign.astype(np.uint32) << (exp_bits + man_bits))
        | (efield.astype(np.uint32) << man_bits)
        | m.astype(np.uint32)
    )
    return code.astype(np.uint16)


def decode_minifloat(codes, exp_bits: int, man_bits: int) -> np.ndarray:
    """Values for bit patterns; total over all patterns of the format width."""
    c = np.asarray(codes, dtype=np.uint32)
    bias = minifloat_bias(exp_bits)
    emin = 1 - bias
    sign = (c >> (exp_bits + man_bits)) & 1
    efield = ((c >> man_bits) & ((1 << exp_bits) - 1)).astype(np.int64)
    m = (c & ((1 << man_bits) - 1)).astype(np.int64)
    sub = efield == 0
    expo = np.where(sub, emin, efield + emin - 1)
    frac = np.where(sub, m, m + (1 << man_bits)).astype(np.float64)
    val = np.ldexp(frac, expo - man_bits)
    return np.where(sign == 1, -val, val)
