"""NumPy reference implementations of the hot kernels.

These are the fallback for the compiled extension in _ext.pyx and the
semantic ground truth: the extension must match them bit for bit.
"""

import math

import numpy as np


def cast_minifloat(a, exp_bits, man_bits):
    """Round an array onto the ExMy minifloat grid (RNE, saturating).

    The grid has IEEE-style subnormals, no inf/NaN encodings, and saturates
    to the largest finite value on overflow. NaN input is a hard error.
    """
    a = np.asarray(a, dtype=np.float64)
    if np.isnan(a).any():
        raise ValueError("NaN on the minifloat datapath")
    bias = (1 << (exp_bits - 1)) - 1
    emin = 1 - bias
    emax = ((1 << exp_bits) - 1) - bias
    maxv = (2.0 - 2.0 ** -man_bits) * 2.0 ** emax
    with np.errstate(invalid="ignore", over="ignore"):
        _, ex = np.frexp(np.abs(a))
        e = np.maximum(ex - 1, emin)
        q = np.ldexp(1.0, e - man_bits)
        out = np.rint(a / q) * q
    np.clip(out, -maxv, maxv, out=out)
    return out


def mxint_quantize_blocks(blocks, max_code, clip_fraction, scale_min, scale_max):
    """Quantize rows of `blocks` (n, B) to shared-scale integers.

    Returns (codes int16 (n, B), exps int8 (n,)). The scale is the smallest
    power of two with max|x| * clip_fraction / scale <= max_code, so at
    clip_fraction 1.0 no value is clipped.
    """
    blocks = np.asarray(blocks, dtype=np.float64)
    amax = np.abs(blocks).max(axis=1)
    eff = amax * clip_fraction
    mant, ex = np.frexp(eff / max_code)
    e = np.where(mant == 0.5, ex - 1, ex)
    e = np.where(amax == 0.0, 0, e)
    e = np.clip(e, scale_min, scale_max)
    scale = np.ldexp(1.0, e)
    codes = np.clip(np.rint(blocks / scale[:, None]), -max_code, max_code).astype(np.int16)
    # A clamped scale can round the whole block to zero; canonicalize to the
    # zero-block exponent so quantize(dequantize(.)) is a fixpoint.
    e = np.where(codes.any(axis=1), e, 0)
    return codes, e.astype(np.int8)


def fwht(a):
    """Orthonormal fast Walsh-Hadamard transform along the last axis."""
    x = np.array(a, dtype=np.float64, copy=True)
    n = x.shape[-1]
    lead = x.shape[:-1]
    h = 1
    while h < n:
        x = x.reshape(*lead, n // (2 * h), 2, h)
        s = x[..., 0, :] + x[..., 1, :]
        d = x[..., 0, :] - x[..., 1, :]
        x = np.stack((s, d), axis=-2).reshape(*lead, n)
        h *= 2
    x *= 1.0 / math.sqrt(n)
    return x
