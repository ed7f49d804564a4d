"""Hadamard rotation for activation outliers.

A block format spends its shared scale on the block max, so a few hot
channels can wreck the resolution of everything else in their block.
Rotating activations with an orthonormal Hadamard matrix spreads that
energy across all channels before quantization; the matmul result is
recovered by applying the (self-inverse) transform again afterwards:

    y = H(Q(H(x))) . W_q^T

The rotation is only worth its two vector ops when it strictly reduces
quantization error on calibration data, so it is gated per layer.
"""

import numpy as np

from ..formats import DataFormat, MXTensor
from ..formats.hadamard import fwht


def quantize_activations(X: np.ndarray, fmt: DataFormat, rotated: bool = False) -> np.ndarray:
    """Effective activation values entering the matmul.

    Plain: Q(X). Rotated: H(Q(H(X))), the value the datapath reconstructs
    after the inverse rotation.
    """
    X = np.asarray(X, dtype=np.float64)
    if not rotated:
        return MXTensor.quantize(X, fmt).dequantize()
    xq = MXTensor.quantize(fwht(X), fmt).dequantize()
    return fwht(xq)


def activation_mse(X: np.ndarray, fmt: DataFormat, rotated: bool = False) -> float:
    """Mean squared activation error with or without the rotation."""
    X = np.asarray(X, dtype=np.float64)
    return float(np.mean((quantize_activations(X, fmt, rotated) - X) ** 2))


def should_rotate(X: np.ndarray, fmt: DataFormat) -> bool:
    """True when the rotation strictly improves calibration MSE."""
    return activation_mse(X, fmt, rotated=True) < activation_mse(X, fmt, rotated=False)
