"""Orthonormal fast Walsh-Hadamard transform.

H is symmetric and orthonormal (1/sqrt(n) scaling), so the transform is its
own inverse; the `inverse` flag exists for call-site clarity. Lengths must be
powers of two.
"""

import numpy as np

from . import kernels


def fwht(x, inverse: bool = False) -> np.ndarray:
    """Transform along the last axis. O(n log n), float64."""
    a = np.asarray(x, dtype=np.float64)
    n = a.shape[-1]
    if n < 1 or n & (n - 1):
        raise ValueError(f"transform length {n} is not a power of two")
    del inverse  # self-inverse
    return kernels.fwht(a)
