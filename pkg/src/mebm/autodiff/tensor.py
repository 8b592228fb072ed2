"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array.  Every differentiable operation
produces a new tensor that remembers its parents and a closure mapping the
output gradient to parent gradients.  :func:`backward` orders the graph by
creation counter, so replaying it visits operations in reverse execution
order exactly once.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

_counter = itertools.count()

# Raise on non-finite forward values instead of propagating them.
CHECK_FINITE = True


class NonFiniteError(FloatingPointError):
    pass


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._id = next(_counter)
        self.op = "leaf"

    # -- basic protocol --------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _wrap(x, like: np.ndarray | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Wrap a binary op's operands; plain numbers take the tensor operand's dtype."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, _wrap(b, a.data)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return _wrap(a, b.data), b
    return _wrap(a), _wrap(b)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Attach ``backward_fn(grad) -> tuple of parent grads`` to a new tensor."""
    if CHECK_FINITE and not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite values produced by '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._id = next(_counter)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# -- backward -----------------------------------------------------------------

def tape(loss: Tensor) -> list[Tensor]:
    """Nodes reachable from ``loss``, in reverse execution order."""
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        nodes.append(node)
        stack.extend(p for p in node._parents if p.requires_grad)
    nodes.sort(key=lambda n: n._id, reverse=True)
    return nodes


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is not connected to any tensor that requires grad")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in tape(loss):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# -- elementwise ----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b),
                       lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b),
                       lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return (unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return make_result(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a.data, b.data, "div")
    if np.any(b.data == 0):
        raise ZeroDivisionError("div: zero in denominator")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)

    return make_result(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = _wrap(a)
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = _wrap(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = _wrap(a)
    if np.any(a.data <= 0):
        raise ValueError("log: nonpositive operand")
    ad = a.data
    return make_result(np.log(ad), (a,), lambda g: (g / ad,), "log")


def power(a, p: float) -> Tensor:
    a = _wrap(a)
    ad = a.data
    return make_result(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),), "power")


def sqrt(a) -> Tensor:
    a = _wrap(a)
    if np.any(a.data < 0):
        raise ValueError("sqrt: negative operand")
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


# -- linear algebra -----------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner extents differ ({a.shape} @ {b.shape})")
    ad, bd = a.data, b.data

    def bw(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return make_result(ad @ bd, (a, b), bw, "matmul")


# -- reductions ---------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for {ndim}-D tensor")
        out.append(ax % ndim)
    return tuple(sorted(out))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _wrap(a)
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape
    out = np.sum(a.data, axis=axes, keepdims=keepdims, dtype=np.float64).astype(a.dtype, copy=False)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(out), (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    shape = a.shape
    out = np.mean(a.data, axis=axes, keepdims=keepdims, dtype=np.float64).astype(a.dtype, copy=False)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).astype(a.dtype, copy=True),)

    return make_result(np.asarray(out), (a,), bw, "mean")


# -- shape ops ---------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    old = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    inv = None if axes is None else tuple(np.argsort(axes))
    return make_result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a, index) -> Tensor:
    a = _wrap(a)
    shape, dtype = a.shape, a.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        if _is_advanced(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return make_result(a.data[index], (a,), bw, "getitem")


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(ts)))

    return make_result(np.concatenate([t.data for t in ts], axis=axis), ts, bw, "concat")


def split(a, sections: int, axis: int = 0) -> list[Tensor]:
    a = _wrap(a)
    n = a.shape[axis]
    if n % sections:
        raise ValueError(f"cannot split extent {n} into {sections} equal parts")
    step = n // sections
    out = []
    for i in range(sections):
        index = [slice(None)] * a.ndim
        index[axis] = slice(i * step, (i + 1) * step)
        out.append(getitem(a, tuple(index)))
    return out


def pad(a, pad_width) -> Tensor:
    """Zero padding; ``pad_width`` follows :func:`numpy.pad`."""
    a = _wrap(a)
    pw = [tuple(p) for p in pad_width]
    index = tuple(slice(lo, lo + n) for (lo, _), n in zip(pw, a.shape))
    return make_result(np.pad(a.data, pw), (a,), lambda g: (g[index],), "pad")
