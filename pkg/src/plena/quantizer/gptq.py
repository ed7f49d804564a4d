"""Weight quantization passes over a linear layer.

Three modes, cheapest to strongest:

- "rtn": round to nearest on the native block grid.
- "rtn_clip": per-block clip-fraction search against calibration data.
- "gptq_clip": clip search plus error propagation. Blocks are quantized
  left to right; each block's error, scaled by the inverse-Hessian
  factor, is folded into the not-yet-quantized columns so later blocks
  absorb it.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..formats import DataFormat, MXTensor
from .clipping import DEFAULT_P_GRID, search_block_clipping
from .hessian import inverse_hessian_factor

MODES = ("rtn", "rtn_clip", "gptq_clip")


@dataclass
class LayerQuant:
    """Result of quantizing one (out_features, in_features) weight."""

    weight_q: np.ndarray  # dequantized values on the block grid
    clip: np.ndarray  # chosen clip fraction per (row, block)
    fmt: DataFormat
    mode: str

    @property
    def n_blocks(self) -> int:
        return self.clip.shape[1]


def rtn_quantize(W: np.ndarray, fmt: DataFormat, clip_fraction: float = 1.0) -> np.ndarray:
    """Round-trip W through the block format; returns dequantized values."""
    return MXTensor.quantize(W, fmt, clip_fraction).dequantize()


def layer_output_error(W: np.ndarray, W_q: np.ndarray, X: np.ndarray) -> float:
    """Frobenius norm of the layer-output perturbation (W_q - W) X^T."""
    W = np.asarray(W, dtype=np.float64)
    W_q = np.asarray(W_q, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    return float(np.linalg.norm((W_q - W) @ X.T))


def quantize_layer(
    W: np.ndarray,
    X: Optional[np.ndarray],
    fmt: DataFormat,
    mode: str = "gptq_clip",
    damping: float = 0.01,
    p_grid: Sequence[float] = DEFAULT_P_GRID,
) -> LayerQuant:
    """Quantize a weight matrix W (out, in) against calibration X (samples, in)."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError(f"weight must be 2-D, got shape {W.shape}")
    n_out, n_in = W.shape
    bs = fmt.block_size
    if n_in % bs:
        raise ValueError(f"in_features {n_in} not a multiple of block size {bs}")
    n_blocks = n_in // bs

    if mode == "rtn":
        return LayerQuant(
            weight_q=rtn_quantize(W, fmt),
            clip=np.ones((n_out, n_blocks)),
            fmt=fmt,
            mode=mode,
        )

    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != n_in:
        raise ValueError(f"calibration must be (samples, {n_in}), got {X.shape}")

    u = inverse_hessian_factor(X, damping) if mode == "gptq_clip" else None
    work = W.copy()
    weight_q = np.empty_like(W)
    clip = np.empty((n_out, n_blocks))
    for i in range(n_blocks):
        b, b2 = i * bs, (i + 1) * bs
        p, q, _ = search_block_clipping(work[:, b:b2], X[:, b:b2], fmt, p_grid)
        weight_q[:, b:b2] = q
        clip[:, i] = p
        if u is not None and b2 < n_in:
            # Diagonal in-block solve; rows of U spread the residual into
            # the columns that have not been quantized yet.
            err = (work[:, b:b2] - q) / np.diag(u)[b:b2]
            work[:, b2:] -= err @ u[b:b2, b2:]
    return LayerQuant(weight_q=weight_q, clip=clip, fmt=fmt, mode=mode)
