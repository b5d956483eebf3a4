"""Strided 3D/2D convolution and transposed 3D convolution.

All ops accept an unbatched input (``[C, D, H, W]`` / ``[C, H, W]``) or a
batch with a leading sample axis.  Size-k kernels use ``k // 2`` zero padding
per side by default, so a stride-s layer maps extent D to ceil(D / s) and the
transposed layer maps it back to D * s.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import ShapeError, Tensor, make_result


def _out_extent(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def _pad5(x: np.ndarray, pad) -> np.ndarray:
    if not any(pad):
        return np.ascontiguousarray(x)
    pd, ph, pw = pad
    return np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))


def _crop5(xp: np.ndarray, pad) -> np.ndarray:
    pd, ph, pw = pad
    d, h, w = xp.shape[2:]
    return xp[:, :, pd:d - pd, ph:h - ph, pw:w - pw]


def _conv5_forward(xd, wd, bd, stride, pad):
    n, _, d, h, w = xd.shape
    co = wd.shape[0]
    ksize = wd.shape[2:]
    out_shape = tuple(_out_extent(sz, k, s, p) for sz, k, s, p in zip((d, h, w), ksize, stride, pad))
    xp = _pad5(xd, pad)
    cols = kernels.vol2col(xp, ksize, stride, out_shape)
    wmat = wd.reshape(co, -1)
    out = np.matmul(wmat, cols)
    if bd is not None:
        out += bd[None, :, None]
    return out.reshape(n, co, *out_shape), cols, xp.shape


def _conv5(x: Tensor, kernel: Tensor, bias: Tensor | None, stride, pad, op: str) -> Tensor:
    xd, wd = x.data, kernel.data
    bd = None if bias is None else bias.data
    ksize = wd.shape[2:]
    out, cols, padded_shape = _conv5_forward(xd, wd, bd, stride, pad)
    out_shape = out.shape[2:]
    co = wd.shape[0]
    wmat = wd.reshape(co, -1)

    def back(g):
        n = g.shape[0]
        gf = g.reshape(n, co, -1)
        gw = np.tensordot(gf, cols, axes=([0, 2], [0, 2])).reshape(wd.shape)
        gcols = np.matmul(wmat.T, gf)
        gx = _crop5(kernels.col2vol(gcols, padded_shape, ksize, stride, out_shape), pad)
        if bias is None:
            return gx, gw
        return gx, gw, gf.sum(axis=(0, 2))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make_result(out, parents, back, op)


def _check_bias(bias: Tensor | None, n_out: int, op: str) -> None:
    if bias is not None and bias.shape != (n_out,):
        raise ShapeError(f"{op}: bias shape {bias.shape} does not match {n_out} output channels")


def _batched(x: Tensor, ndim: int) -> tuple[Tensor, bool]:
    from .ops import reshape
    if x.ndim == ndim:
        return reshape(x, (1, *x.shape)), True
    return x, False


def _unbatched(out: Tensor, squeeze: bool) -> Tensor:
    from .ops import reshape
    return reshape(out, out.shape[1:]) if squeeze else out


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: str | int = "same") -> Tensor:
    """Cross-correlate ``x`` with ``kernel`` of shape ``[C_out, C_in, k, k, k]``."""
    if kernel.ndim != 5 or x.ndim not in (4, 5) or x.shape[-4] != kernel.shape[1]:
        raise ShapeError(f"conv3d: input shape {x.shape} incompatible with kernel shape {kernel.shape}")
    if stride < 1:
        raise ShapeError(f"conv3d: stride must be positive, got {stride}")
    _check_bias(bias, kernel.shape[0], "conv3d")
    pad = _padding(kernel.shape[2:], padding, "conv3d")
    xb, squeeze = _batched(x, 4)
    out = _conv5(xb, kernel, bias, (stride,) * 3, pad, "conv3d")
    return _unbatched(out, squeeze)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: str | int = "same") -> Tensor:
    """2D cross-correlation; ``kernel`` is ``[C_out, C_in, k, k]``.

    ``padding`` is ``"same"`` (k // 2 per side), ``"valid"`` (none) or an int.
    """
    from .ops import reshape
    if kernel.ndim != 4 or x.ndim not in (3, 4) or x.shape[-3] != kernel.shape[1]:
        raise ShapeError(f"conv2d: input shape {x.shape} incompatible with kernel shape {kernel.shape}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be positive, got {stride}")
    _check_bias(bias, kernel.shape[0], "conv2d")
    ph, pw = _padding(kernel.shape[2:], padding, "conv2d")
    xb, squeeze = _batched(x, 3)
    n, c, h, w = xb.shape
    x5 = reshape(xb, (n, c, 1, h, w))
    k5 = reshape(kernel, (kernel.shape[0], kernel.shape[1], 1, *kernel.shape[2:]))
    out = _conv5(x5, k5, bias, (1, stride, stride), (0, ph, pw), "conv2d")
    out = reshape(out, (n, out.shape[1], *out.shape[3:]))
    return _unbatched(out, squeeze)


def _padding(ksize, padding, op: str) -> tuple[int, ...]:
    if padding == "same":
        if any(k % 2 == 0 for k in ksize):
            raise ShapeError(f"{op}: 'same' padding needs odd kernel sizes, got {tuple(ksize)}")
        return tuple(k // 2 for k in ksize)
    if padding == "valid":
        return (0,) * len(ksize)
    if isinstance(padding, int) and padding >= 0:
        return (padding,) * len(ksize)
    raise ShapeError(f"{op}: unsupported padding {padding!r}")


def deconv3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Transposed 3D convolution; ``kernel`` is ``[C_in, C_out, k, k, k]``.

    This is the adjoint of :func:`conv3d` with the same kernel and stride:
    ``<conv3d(u, K), v> == <u, deconv3d(v, K)>``.  Output extent is D * stride.
    """
    if kernel.ndim != 5 or x.ndim not in (4, 5) or x.shape[-4] != kernel.shape[0]:
        raise ShapeError(f"deconv3d: input shape {x.shape} incompatible with kernel shape {kernel.shape}")
    if stride < 1:
        raise ShapeError(f"deconv3d: stride must be positive, got {stride}")
    ci, co = kernel.shape[:2]
    _check_bias(bias, co, "deconv3d")
    ksize = kernel.shape[2:]
    pad = _padding(ksize, "same", "deconv3d")
    strides = (stride,) * 3
    xb, squeeze = _batched(x, 4)
    yd, wd = xb.data, kernel.data
    n = yd.shape[0]
    in_shape = yd.shape[2:]
    out_sp = tuple(sz * stride for sz in in_shape)
    if tuple(_out_extent(o, k, stride, p) for o, k, p in zip(out_sp, ksize, pad)) != in_shape:
        raise ShapeError(f"deconv3d: input extent {in_shape} cannot be mirrored with stride {stride}")
    padded_shape = (n, co, *(o + 2 * p for o, p in zip(out_sp, pad)))
    wmat = wd.reshape(ci, -1)
    yflat = yd.reshape(n, ci, -1)
    cols = np.matmul(wmat.T, yflat)
    out = np.ascontiguousarray(_crop5(kernels.col2vol(cols, padded_shape, ksize, strides, in_shape), pad))
    if bias is not None:
        out += bias.data[None, :, None, None, None]

    def back(g):
        gcols = kernels.vol2col(_pad5(g, pad), ksize, strides, in_shape)
        gy = np.matmul(wmat, gcols).reshape(yd.shape)
        gw = np.tensordot(yflat, gcols, axes=([0, 2], [0, 2])).reshape(wd.shape)
        if bias is None:
            return gy, gw
        return gy, gw, g.sum(axis=(0, 2, 3, 4))

    parents = (xb, kernel) if bias is None else (xb, kernel, bias)
    res = make_result(out, parents, back, "deconv3d")
    return _unbatched(res, squeeze)
