"""Shared-scale block quantization (MXINT / MXFP) and the MXTensor container.

A block of B values shares one power-of-two scale 2^e. The exponent is the
smallest integer with max|x| * clip_fraction / 2^e <= max element magnitude,
i.e. e = ceil(log2(max|x| * clip_fraction / max_mag)), computed exactly via
frexp. Elements are rounded to nearest (ties to even) and clipped to the
element range; at clip_fraction 1.0 nothing clips and the roundtrip error is
bounded by half the scale step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .dataformat import DataFormat, FormatKind
from .minifloat import cast_minifloat, decode_minifloat, encode_minifloat


def scale_exponents(amax, max_mag: float, scale_min: int, scale_max: int) -> np.ndarray:
    """ceil(log2(amax / max_mag)) per entry, 0 for zero blocks, clamped."""
    amax = np.asarray(amax, dtype=np.float64)
    mant, ex = np.frexp(amax / max_mag)
    e = np.where(mant == 0.5, ex - 1, ex)
    e = np.where(amax == 0.0, 0, e)
    return np.clip(e, scale_min, scale_max)


def quantize_blocks(blocks: np.ndarray, fmt: DataFormat, clip_fraction: float = 1.0):
    """Quantize rows of (n, B) to (codes, exps). Codes are int16 for MXINT,
    uint16 minifloat bit patterns for MXFP."""
    blocks = np.asarray(blocks, dtype=np.float64)
    if blocks.ndim != 2:
        raise ValueError("expected a (n_blocks, block) array")
    if not np.isfinite(blocks).all():
        raise ValueError("non-finite values in quantizer input")
    if not 0.0 < clip_fraction <= 1.0:
        raise ValueError("clip_fraction must be in (0, 1]")
    if fmt.kind == FormatKind.MXINT:
        return kernels.mxint_quantize_blocks(
            blocks, fmt.max_code, clip_fraction, fmt.scale_min, fmt.scale_max
        )
    if fmt.kind != FormatKind.MXFP:
        raise ValueError("block quantization needs a block format")
    amax = np.abs(blocks).max(axis=1)
    exps = scale_exponents(amax * clip_fraction, fmt.max_value, fmt.scale_min, fmt.scale_max)
    vals = cast_minifloat(
        blocks / np.ldexp(1.0, exps)[:, None], fmt.exponent_bits, fmt.mantissa_bits
    )
    # Canonicalize: if the whole block fits the next smaller scale, shift down.
    # The RNE cast can land the block max exactly on max_value/2, and without
    # this step quantizing the dequantized tensor would pick a different
    # exponent. Doubling is exact on the minifloat grid, so values are
    # preserved. At most one shift is ever needed.
    half = fmt.max_value / 2.0
    for _ in range(2):
        cmax = np.abs(vals).max(axis=1)
        mask = (cmax > 0.0) & (cmax <= half) & (exps > fmt.scale_min)
        if not mask.any():
            break
        vals[mask] *= 2.0
        exps = np.where(mask, exps - 1, exps)
    # Zero-block canonicalization, same rule as the MXINT kernel.
    exps = np.where(np.abs(vals).max(axis=1) > 0.0, exps, 0)
    codes = encode_minifloat(vals, fmt.exponent_bits, fmt.mantissa_bits)
    return codes, exps.astype(np.int8)


def dequantize_blocks(codes: np.ndarray, exps: np.ndarray, fmt: DataFormat) -> np.ndarray:
    exps = np.asarray(exps, dtype=np.int64)
    if fmt.kind == FormatKind.MXINT:
        codes = np.asarray(codes, dtype=np.int64)
        if np.abs(codes).max(initial=0) > fmt.max_code:
            raise ValueError("block code out of range for format")
        return np.ldexp(codes.astype(np.float64), exps[:, None])
    if fmt.kind != FormatKind.MXFP:
        raise ValueError("block dequantization needs a block format")
    codes = np.asarray(codes, dtype=np.uint16)
    if int(codes.max(initial=0)) >= (1 << fmt.element_bits):
        raise ValueError("block code out of range for format")
    vals = decode_minifloat(codes, fmt.exponent_bits, fmt.mantissa_bits)
    return np.ldexp(vals, exps[:, None])


def quantize_block(values, fmt: DataFormat, clip_fraction: float = 1.0):
    """Single-block convenience: returns (codes (B,), exp int)."""
    values = np.atleast_1d(np.asarray(values, dtype=np.float64))
    codes, exps = quantize_blocks(values[None, :], fmt, clip_fraction)
    return codes[0], int(exps[0])


def dequantize_block(codes, exp: int, fmt: DataFormat) -> np.ndarray:
    codes = np.atleast_1d(codes)
    return dequantize_blocks(codes[None, :], np.asarray([exp]), fmt)[0]


@dataclass
class MXTensor:
    """A tensor quantized per-block along its last axis.

    The last axis is zero-padded to a multiple of the block size; blocks never
    straddle rows of the flattened (-1, last_axis) view. MINIFLOAT tensors are
    the degenerate case: flat element codes, no scales.
    """

    fmt: DataFormat
    shape: tuple
    codes: np.ndarray
    exps: np.ndarray

    @classmethod
    def quantize(cls, x, fmt: DataFormat, clip_fraction: float = 1.0) -> "MXTensor":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 0:
            raise ValueError("scalar tensors are unsupported")
        if fmt.kind == FormatKind.MINIFLOAT:
            vals = cast_minifloat(x, fmt.exponent_bits, fmt.mantissa_bits)
            codes = encode_minifloat(vals.reshape(-1), fmt.exponent_bits, fmt.mantissa_bits)
            return cls(fmt, x.shape, codes, np.zeros(0, dtype=np.int8))
        last = x.shape[-1]
        pad = (-last) % fmt.block_size
        flat = x.reshape(-1, last)
        if pad:
            flat = np.pad(flat, ((0, 0), (0, pad)))
        codes, exps = quantize_blocks(flat.reshape(-1, fmt.block_size), fmt, clip_fraction)
        return cls(fmt, x.shape, codes, exps)

    def dequantize(self) -> np.ndarray:
        if self.fmt.kind == FormatKind.MINIFLOAT:
            vals = decode_minifloat(self.codes, self.fmt.exponent_bits, self.fmt.mantissa_bits)
            return vals.reshape(self.shape)
        vals = dequantize_blocks(self.codes, self.exps, self.fmt)
        last = self.shape[-1]
        padded = last + (-last) % self.fmt.block_size
        return vals.reshape(-1, padded)[:, :last].reshape(self.shape)

    @property
    def n_blocks(self) -> int:
        return 0 if self.fmt.kind == FormatKind.MINIFLOAT else len(self.exps)

    @property
    def n_codes(self) -> int:
        return self.codes.size

    @property
    def payload_bits(self) -> int:
        return self.n_codes * self.fmt.element_bits

    @property
    def nbytes(self) -> int:
        """Serialized payload size: bit-packed codes plus one byte per scale."""
        return (self.payload_bits + 7) // 8 + self.n_blocks
