"""Pure-numpy gather/scatter kernels behind the convolution ops.

``vol2col`` lays out every receptive field of a padded volume as one column;
``col2vol`` is its adjoint and scatter-adds columns back.  Both loop over
kernel offsets outermost, which fixes the summation order of ``col2vol``;
the compiled kernels follow the same order so the two backends agree bit
for bit.
"""
from __future__ import annotations

import numpy as np


def vol2col(xp: np.ndarray, ksize, stride, out_shape) -> np.ndarray:
    n, c = xp.shape[:2]
    kd, kh, kw = ksize
    sd, sh, sw = stride
    od, oh, ow = out_shape
    cols = np.empty((n, c, kd, kh, kw, od, oh, ow), dtype=xp.dtype)
    for a in range(kd):
        for b in range(kh):
            for e in range(kw):
                cols[:, :, a, b, e] = xp[:, :, a:a + sd * od:sd, b:b + sh * oh:sh, e:e + sw * ow:sw]
    return cols.reshape(n, c * kd * kh * kw, od * oh * ow)


def col2vol(cols: np.ndarray, padded_shape, ksize, stride, out_shape) -> np.ndarray:
    n, c = padded_shape[:2]
    kd, kh, kw = ksize
    sd, sh, sw = stride
    od, oh, ow = out_shape
    xp = np.zeros(padded_shape, dtype=cols.dtype)
    cv = cols.reshape(n, c, kd, kh, kw, od, oh, ow)
    for a in range(kd):
        for b in range(kh):
            for e in range(kw):
                xp[:, :, a:a + sd * od:sd, b:b + sh * oh:sh, e:e + sw * ow:sw] += cv[:, :, a, b, e]
    return xp
