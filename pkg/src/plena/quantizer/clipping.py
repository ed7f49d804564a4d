"""Per-block clip-fraction search.

Shrinking the block scale below the max-abs point clips outliers but
refines the grid for everything else; the right trade depends on the
activation energy each weight column sees. The search scores each
candidate fraction by the layer-output error the block would cause and
keeps the best one per weight row.
"""

from typing import Sequence, Tuple

import numpy as np

from ..formats import DataFormat
from ..formats.mx import dequantize_blocks, quantize_blocks

DEFAULT_P_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 0.99, 1.0)


def search_block_clipping(
    Wb: np.ndarray,
    Xb: np.ndarray,
    fmt: DataFormat,
    p_grid: Sequence[float] = DEFAULT_P_GRID,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pick the best clip fraction per row of one weight block.

    Wb is (rows, block_size): the slice of weight columns covered by one
    quantization block. Xb is (samples, block_size): the matching slice
    of calibration activations. For each row the error of candidate p is
    ||(q_p - w) Xb^T||^2; ties go to the larger fraction so unclipped
    wins when clipping buys nothing.

    Returns (p, q, err): fractions (rows,), dequantized block values
    (rows, block_size), and the winning error (rows,).
    """
    Wb = np.asarray(Wb, dtype=np.float64)
    Xb = np.asarray(Xb, dtype=np.float64)
    if Wb.ndim != 2 or Wb.shape[1] != fmt.block_size:
        raise ValueError(f"weight block must be (rows, {fmt.block_size}), got {Wb.shape}")
    if Xb.ndim != 2 or Xb.shape[1] != fmt.block_size:
        raise ValueError(f"activation block must be (samples, {fmt.block_size}), got {Xb.shape}")
    grid = sorted(float(p) for p in p_grid)
    if not grid or grid[0] <= 0.0 or grid[-1] > 1.0:
        raise ValueError(f"clip fractions must lie in (0, 1], got {p_grid}")

    rows = Wb.shape[0]
    best_p = np.empty(rows)
    best_q = np.empty_like(Wb)
    best_err = np.full(rows, np.inf)
    for p in grid:
        codes, exps = quantize_blocks(Wb, fmt, p)
        q = dequantize_blocks(codes, exps, fmt)
        err = (((q - Wb) @ Xb.T) ** 2).sum(axis=1)
        take = err <= best_err
        best_p[take] = p
        best_q[take] = q[take]
        best_err[take] = err[take]
    return best_p, best_q, best_err
