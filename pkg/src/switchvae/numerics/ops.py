"""Elementwise, reduction and dense operations with their gradient rules."""
from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, make_result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    else:
        a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None
    return a, b


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b),
                       lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
                       "mul")


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a constant that takes no gradient."""
    return make_result(a.data * c, (a,), lambda g: (g * c,), "scale")


def detach(a: Tensor) -> Tensor:
    return a.detach()


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    out = a.data.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        return (np.broadcast_to(np.expand_dims(g, axes), shape).copy(),)

    return make_result(np.asarray(out), (a,), back, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of two equally shaped tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"dot needs equal shapes, got {a.shape} and {b.shape}")
    return sum(mul(a, b))


def square(a: Tensor) -> Tensor:
    d = a.data
    return make_result(d * d, (a,), lambda g: (2.0 * g * d,), "square")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} into {tuple(shape)}") from None
    return make_result(out, (a,), lambda g: (g.reshape(old),), "reshape")


def index(a: Tensor, idx) -> Tensor:
    shape, dtype = a.shape, a.dtype

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        if _is_fancy(idx):
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return make_result(a.data[idx], (a,), back, "index")


def _is_fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(np.take(g, range(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, back, "concat")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    d = a.data
    return make_result(np.log(d), (a,), lambda g: (g / d,), "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return make_result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def elu(a: Tensor) -> Tensor:
    """x for x > 0, exp(x) - 1 otherwise (alpha = 1)."""
    x = a.data
    neg_part = np.expm1(np.minimum(x, 0.0))
    pos = x > 0
    out = np.where(pos, x, neg_part)

    def back(g):
        return (g * np.where(pos, 1.0, neg_part + 1.0).astype(x.dtype, copy=False),)

    return make_result(out, (a,), back, "elu")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return make_result(np.clip(x, lo, hi), (a,), lambda g: (g * inside,), "clamp")


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``weight @ x + bias`` for a vector, or row-wise for a batch ``[N, n_in]``."""
    if weight.ndim != 2 or bias.shape != (weight.shape[0],) or x.shape[-1] != weight.shape[1] \
            or x.ndim not in (1, 2):
        raise ShapeError(
            f"dense: input {x.shape}, weight {weight.shape}, bias {bias.shape} are inconsistent"
        )
    xd, wd = x.data, weight.data
    out = xd @ wd.T + bias.data

    def back(g):
        if xd.ndim == 1:
            gw = np.outer(g, xd)
            gb = g
        else:
            gw = g.T @ xd
            gb = g.sum(axis=0)
        return g @ wd, gw, gb

    return make_result(out, (x, weight, bias), back, "dense")


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each vector (last axis) to unit Euclidean norm."""
    xd = x.data
    norm = np.sqrt(np.sum(xd * xd, axis=-1, keepdims=True)) + eps
    out = xd / norm

    def back(g):
        proj = np.sum(g * out, axis=-1, keepdims=True)
        return ((g - out * proj) / norm,)

    return make_result(out, (x,), back, "l2_normalize")
