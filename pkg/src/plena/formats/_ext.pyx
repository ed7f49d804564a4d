# cython: language_level=3
"""Compiled hot kernels: minifloat cast, MXINT block quantize, FWHT.

Bit-compatible with _kernels_np; the parity tests assert exact agreement.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, frexp, isinf, isnan, ldexp, rint, sqrt

cnp.import_array()


def cast_minifloat(a, int exp_bits, int man_bits):
    arr = np.ascontiguousarray(a, dtype=np.float64)
    out_arr = np.empty_like(arr)
    cdef double[::1] x = arr.reshape(-1)
    cdef double[::1] out = out_arr.reshape(-1)
    cdef Py_ssize_t i, n = x.shape[0]
    cdef int bias = (1 << (exp_bits - 1)) - 1
    cdef int emin = 1 - bias
    cdef int emax = ((1 << exp_bits) - 1) - bias
    cdef double maxv = (2.0 - ldexp(1.0, -man_bits)) * ldexp(1.0, emax)
    cdef double v, q, r
    cdef int ex, e
    for i in range(n):
        v = x[i]
        if isnan(v):
            raise ValueError("NaN on the minifloat datapath")
        if isinf(v):
            out[i] = maxv if v > 0 else -maxv
            continue
        frexp(fabs(v), &ex)
        e = ex - 1
        if e < emin:
            e = emin
        q = ldexp(1.0, e - man_bits)
        r = rint(v / q) * q
        if r > maxv:
            r = maxv
        elif r < -maxv:
            r = -maxv
        out[i] = r
    return out_arr


def mxint_quantize_blocks(blocks, int max_code, double clip_fraction,
                          int scale_min, int scale_max):
    b = np.ascontiguousarray(blocks, dtype=np.float64)
    if b.ndim != 2:
        raise ValueError("expected a (n_blocks, block) array")
    codes_arr = np.empty(b.shape, dtype=np.int16)
    exps_arr = np.empty(b.shape[0], dtype=np.int8)
    cdef double[:, ::1] x = b
    cdef short[:, ::1] codes = codes_arr
    cdef signed char[::1] exps = exps_arr
    cdef Py_ssize_t i, j, nb = x.shape[0], bs = x.shape[1]
    cdef double amax, av, scale, c, mant
    cdef int ex, e
    cdef bint any_code
    for i in range(nb):
        amax = 0.0
        for j in range(bs):
            av = fabs(x[i, j])
            if av > amax:
                amax = av
        mant = frexp(amax * clip_fraction / max_code, &ex)
        e = ex - 1 if mant == 0.5 else ex
        if amax == 0.0:
            e = 0
        if e < scale_min:
            e = scale_min
        elif e > scale_max:
            e = scale_max
        scale = ldexp(1.0, e)
        any_code = False
        for j in range(bs):
            c = rint(x[i, j] / scale)
            if c > max_code:
                c = max_code
            elif c < -max_code:
                c = -max_code
            if c != 0.0:
                any_code = True
            codes[i, j] = <short> c
        # A clamped scale can round the whole block to zero; canonicalize to
        # the zero-block exponent so quantize(dequantize(.)) is a fixpoint.
        exps[i] = <signed char> e if any_code else 0
    return codes_arr, exps_arr


def fwht(a):
    arr = np.array(a, dtype=np.float64, copy=True, order="C")
    cdef Py_ssize_t n = arr.shape[arr.ndim - 1]
    flat = arr.reshape(-1, n)
    cdef double[:, ::1] x = flat
    cdef Py_ssize_t rows = x.shape[0]
    cdef Py_ssize_t r, i, j, h
    cdef double u, v, inv
    h = 1
    while h < n:
        for r in range(rows):
            i = 0
            while i < n:
                for j in range(i, i + h):
                    u = x[r, j]
                    v = x[r, j + h]
                    x[r, j] = u + v
                    x[r, j + h] = u - v
                i += 2 * h
        h *= 2
    inv = 1.0 / sqrt(<double> n)
    for r in range(rows):
        for j in range(n):
            x[r, j] *= inv
    return arr
