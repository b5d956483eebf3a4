"""Backend selection for the convolution gather/scatter kernels.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``SWITCHVAE_PURE_PYTHON`` is set to a non-empty value
other than ``0``, the numpy implementation is used.  Both produce identical
arrays.
"""
from __future__ import annotations

import os

from . import _vol2col_py

BACKEND = "numpy"
_impl = _vol2col_py

if os.environ.get("SWITCHVAE_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _vol2col as _compiled
    except ImportError:
        _compiled = None
    else:
        _impl = _compiled
        BACKEND = "compiled"
else:
    _compiled = None


def compiled_available() -> bool:
    return _compiled is not None


def get_impl(name: str | None = None):
    """Return the kernel module by name ("compiled" or "numpy"); default active."""
    if name is None:
        return _impl
    if name == "numpy":
        return _vol2col_py
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def vol2col(xp, ksize, stride, out_shape):
    return _impl.vol2col(xp, ksize, stride, out_shape)


def col2vol(cols, padded_shape, ksize, stride, out_shape):
    return _impl.col2vol(cols, padded_shape, ksize, stride, out_shape)
