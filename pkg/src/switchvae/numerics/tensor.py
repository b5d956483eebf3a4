"""Tensor type, parameter groups and the reverse-mode tape.

Every differentiable operation builds a new :class:`Tensor` that remembers its
parents and a closure mapping the output gradient to parent gradients.  The
tape is rebuilt on every forward pass, so the active subgraph may change from
one call to the next (the encoder switch relies on this).
"""
from __future__ import annotations

import contextlib
import itertools
from collections.abc import Callable, Iterator, Mapping, Sequence

import numpy as np


class NumericsError(Exception):
    """Base class for errors raised by the differentiation substrate."""


class ShapeError(NumericsError, ValueError):
    """Operand shapes are inconsistent."""


class GraphError(NumericsError, RuntimeError):
    """The recorded graph cannot be differentiated (non-scalar root, cycle)."""


class NonFiniteError(NumericsError, FloatingPointError):
    """A NaN or Inf appeared while debug checks were enabled."""


_ids = itertools.count()
_state = {"grad_enabled": True, "debug": False}

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def set_debug(enabled: bool) -> None:
    """Toggle finite-value checks on every operation output."""
    _state["debug"] = bool(enabled)


def debug_enabled() -> bool:
    return _state["debug"]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording the tape."""
    prev = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = prev


def grad_enabled() -> bool:
    return _state["grad_enabled"]


class Tensor:
    """n-dimensional array with an optional accumulated gradient.

    ``data`` is a numpy array; its shape is the tensor shape.  Only leaves with
    ``requires_grad`` keep a ``grad`` after :func:`backward`; intermediate
    gradients live only for the duration of the backward sweep.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._id = next(_ids)
        if _state["debug"]:
            _check_finite(arr, name or "tensor")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # operator sugar; implementations live in ops to keep one gradient rule per op
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __getitem__(self, index):
        from . import ops
        return ops.index(self, index)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NonFiniteError(f"{what}: {bad} non-finite value(s) in array of shape {arr.shape}")


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn,
                name: str | None = None) -> Tensor:
    """Wrap an op output, recording the tape entry when any parent needs grad."""
    if _state["debug"]:
        _check_finite(data, name or "op output")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = name
    out._id = next(_ids)
    needs = _state["grad_enabled"] and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _collect(root: Tensor) -> list[Tensor]:
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node._id in seen:
            continue
        seen[node._id] = node
        for p in node._parents:
            if p._id >= node._id:
                raise GraphError(
                    f"cycle in recorded graph: parent {p._id} is not older than node {node._id}"
                )
            if p.requires_grad and p._id not in seen:
                stack.append(p)
    # parents are always created before children, so descending id is a
    # valid reverse topological order and independent of traversal details
    return sorted(seen.values(), key=lambda t: t._id, reverse=True)


def backward(output: Tensor, params: ParamGroup | None = None) -> ParamGroup | None:
    """Accumulate d(output)/d(leaf) into every reachable leaf's ``grad``.

    ``output`` must hold a single value.  Gradients add onto whatever the
    leaves already carry; call :meth:`ParamGroup.zero_grad` between steps.
    Returns ``params`` for convenience.
    """
    if output.data.size != 1:
        raise GraphError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        return params
    order = _collect(output)
    grads: dict[int, np.ndarray] = {output._id: np.ones_like(output.data)}
    for node in order:
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.data.shape:
                raise ShapeError(
                    f"gradient shape {pg.shape} does not match operand shape {p.data.shape}"
                )
            prev = grads.get(p._id)
            grads[p._id] = pg if prev is None else prev + pg
    return params


class ParamGroup(Mapping):
    """Named trainable tensors, iterated in lexicographic id order."""

    def __init__(self, params: Mapping[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        for key, value in (params or {}).items():
            self[key] = value

    def __setitem__(self, key: str, value) -> None:
        if key in self._params:
            raise KeyError(f"duplicate parameter id {key!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        t.name = key
        self._params[key] = t

    def __getitem__(self, key: str) -> Tensor:
        return self._params[key]

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._params))

    def __len__(self) -> int:
        return len(self._params)

    def __repr__(self) -> str:
        return f"ParamGroup({len(self)} tensors, {self.num_values()} values)"

    def num_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grad_of(self, key: str) -> np.ndarray:
        """Gradient of ``key``, zeros when backward never reached it."""
        t = self._params[key]
        return np.zeros_like(t.data) if t.grad is None else t.grad

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(self.grad_of(k) ** 2)) for k in self)))

    def subgroup(self, prefix: str) -> ParamGroup:
        """View of the tensors whose id starts with ``prefix``, prefix stripped."""
        sub = ParamGroup()
        for key in self:
            if key.startswith(prefix):
                sub._params[key[len(prefix):]] = self._params[key]
        return sub

    def merged(self, *others: ParamGroup) -> ParamGroup:
        out = ParamGroup()
        for group in (self, *others):
            for key in group:
                if key in out._params:
                    raise KeyError(f"duplicate parameter id {key!r}")
                out._params[key] = group[key]
        return out

    def values_copy(self) -> dict[str, np.ndarray]:
        return {k: self._params[k].data.copy() for k in self}

    def astype(self, dtype) -> None:
        for t in self._params.values():
            t.data = t.data.astype(dtype)
            t.grad = None
