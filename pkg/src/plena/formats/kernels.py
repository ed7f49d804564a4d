"""Kernel dispatch: compiled extension if available, NumPy fallback otherwise.

Set PLENA_NO_EXT=1 to force the fallback (useful for benchmarking and for
verifying that both implementations agree).
"""

import os

import numpy as np

from . import _kernels_np

HAVE_EXT = False
_impl = _kernels_np

if not os.environ.get("PLENA_NO_EXT"):
    try:
        from . import _ext as _impl  # type: ignore[no-redef]

        HAVE_EXT = True
    except ImportError:
        pass


def cast_minifloat(a, exp_bits, man_bits):
    a = np.asarray(a, dtype=np.float64)
    # the extension flattens 0-d inputs; pin the output to the input shape
    return _impl.cast_minifloat(a, exp_bits, man_bits).reshape(a.shape)


def mxint_quantize_blocks(blocks, max_code, clip_fraction, scale_min, scale_max):
    return _impl.mxint_quantize_blocks(blocks, max_code, clip_fraction, scale_min, scale_max)


def fwht(a):
    return _impl.fwht(a)
