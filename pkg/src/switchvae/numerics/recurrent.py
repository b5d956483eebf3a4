"""Gated recurrent unit cell (Cho et al. 2014 convention)."""
from __future__ import annotations

from collections.abc import Mapping

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor, make_result

GRU_KEYS = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


def gru_cell(h_prev: Tensor, x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """One GRU step.

    z = sigmoid(W_z x + U_z h + b_z), r = sigmoid(W_r x + U_r h + b_r),
    h~ = tanh(W_h x + U_h (r * h) + b_h), h' = (1 - z) * h + z * h~.

    ``W_*`` are ``[n_h, n_x]``, ``U_*`` are ``[n_h, n_h]``; ``h_prev``/``x`` may
    carry a leading batch axis.
    """
    missing = [k for k in GRU_KEYS if k not in params]
    if missing:
        raise KeyError(f"gru_cell: missing parameters {missing}")
    n_h, n_x = params["W_z"].shape
    if h_prev.shape[-1] != n_h or x.shape[-1] != n_x or h_prev.shape[:-1] != x.shape[:-1]:
        raise ShapeError(
            f"gru_cell: hidden {h_prev.shape} / input {x.shape} do not match weights [{n_h}, {n_x}]"
        )
    def gate(w, u, b, h):
        return ops.add(ops.dense(x, params[w], params[b]), _matvec(h, params[u]))

    z = ops.sigmoid(gate("W_z", "U_z", "b_z", h_prev))
    r = ops.sigmoid(gate("W_r", "U_r", "b_r", h_prev))
    h_tilde = ops.tanh(gate("W_h", "U_h", "b_h", ops.mul(r, h_prev)))
    return ops.add(h_prev, ops.mul(z, ops.sub(h_tilde, h_prev)))


def _matvec(h: Tensor, u: Tensor) -> Tensor:
    hd, ud = h.data, u.data
    out = hd @ ud.T

    def back(g):
        gu = g.T @ hd if hd.ndim == 2 else np.outer(g, hd)
        return g @ ud, gu

    return make_result(out, (h, u), back, "matvec")
