# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled gather/scatter kernels; same contract and summation order as
``_vol2col_py``."""
import numpy as np

ctypedef fused real:
    float
    double


def _vol2col(const real[:, :, :, :, ::1] xp, real[:, :, ::1] cv,
             int kd, int kh, int kw, int sd, int sh, int sw, int od, int oh, int ow):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t i, ch, a, b, e, z, y, x, row, p
    with nogil:
        for i in range(n):
            for ch in range(c):
                for a in range(kd):
                    for b in range(kh):
                        for e in range(kw):
                            row = ((ch * kd + a) * kh + b) * kw + e
                            p = 0
                            for z in range(od):
                                for y in range(oh):
                                    for x in range(ow):
                                        cv[i, row, p] = xp[i, ch, a + z * sd, b + y * sh, e + x * sw]
                                        p += 1


def _col2vol(const real[:, :, ::1] cv, real[:, :, :, :, ::1] xp,
             int kd, int kh, int kw, int sd, int sh, int sw, int od, int oh, int ow):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t i, ch, a, b, e, z, y, x, row, p
    with nogil:
        for i in range(n):
            for ch in range(c):
                for a in range(kd):
                    for b in range(kh):
                        for e in range(kw):
                            row = ((ch * kd + a) * kh + b) * kw + e
                            p = 0
                            for z in range(od):
                                for y in range(oh):
                                    for x in range(ow):
                                        xp[i, ch, a + z * sd, b + y * sh, e + x * sw] = (
                                            xp[i, ch, a + z * sd, b + y * sh, e + x * sw] + cv[i, row, p])
                                        p += 1


def vol2col(xp, ksize, stride, out_shape):
    xp = np.ascontiguousarray(xp)
    kd, kh, kw = ksize
    sd, sh, sw = stride
    od, oh, ow = out_shape
    n, c = xp.shape[:2]
    cols = np.empty((n, c * kd * kh * kw, od * oh * ow), dtype=xp.dtype)
    _vol2col(xp, cols, kd, kh, kw, sd, sh, sw, od, oh, ow)
    return cols


def col2vol(cols, padded_shape, ksize, stride, out_shape):
    cols = np.ascontiguousarray(cols)
    kd, kh, kw = ksize
    sd, sh, sw = stride
    od, oh, ow = out_shape
    xp = np.zeros(padded_shape, dtype=cols.dtype)
    _col2vol(cols, xp, kd, kh, kw, sd, sh, sw, od, oh, ow)
    return xp
