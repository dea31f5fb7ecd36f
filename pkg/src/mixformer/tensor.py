"""Dense float64 tensors with tape-free reverse-mode differentiation.

Every operation returns a new :class:`Tensor` whose ``data`` is a read-only
numpy array. When any input requires gradients the output remembers its
parents and a closure mapping the output gradient to one gradient per
parent; :func:`backward` walks that graph in reverse topological order.
"""
from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np

LAYOUTS = ("NCHW", "NLC", "flat")

_grad_enabled = contextvars.ContextVar("grad_enabled", default=True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (per thread / task)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def _check_shape(shape: tuple) -> None:
    if any(s < 1 for s in shape):
        raise ValueError(f"tensor dimensions must be >= 1, got shape {shape}")


class Tensor:
    """An immutable n-dimensional array of 64-bit reals."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, layout: str = "flat"):
        arr = np.array(data, dtype=np.float64)
        _check_shape(arr.shape)
        if layout not in LAYOUTS:
            raise ValueError(f"unknown layout {layout!r}")
        arr.flags.writeable = False
        self.data = arr
        self.layout = layout
        self.requires_grad = requires_grad
        self.grad = np.zeros(arr.shape) if requires_grad else None
        self._parents: tuple = ()
        self._backward: Callable | None = None

    @classmethod
    def _from_op(cls, arr, parents: Sequence["Tensor"], backward: Callable, layout: str = "flat") -> "Tensor":
        out = Tensor.__new__(Tensor)
        arr = np.asarray(arr, dtype=np.float64)
        if arr.flags.writeable:
            arr.flags.writeable = False
        out.data = arr
        out.layout = layout
        out.grad = None
        track = _grad_enabled.get() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else _raise_item(self.shape)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, layout={self.layout!r}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

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

    def backward(self) -> None:
        backward(self)


def _raise_item(shape):
    raise ValueError(f"item() needs a single-element tensor, got shape {shape}")


class Parameter(Tensor):
    """A named trainable tensor; ``grad`` starts at zero and accumulates."""

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name

    @property
    def value(self) -> np.ndarray:
        return self.data

    def assign(self, value) -> None:
        arr = np.array(value, dtype=np.float64)
        if arr.shape != self.shape:
            raise ValueError(f"{self.name or 'parameter'}: cannot assign shape {arr.shape} to {self.shape}")
        arr.flags.writeable = False
        self.data = arr

    def zero_grad(self) -> None:
        self.grad = np.zeros(self.shape)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- graph traversal ---------------------------------------------------

def _toposort(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``grad`` of every reachable leaf."""
    if root.size != 1:
        raise ValueError(f"backward() needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads = {id(root): np.ones(root.shape)}
    for node in reversed(_toposort(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros(node.shape)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# -- broadcasting helpers ----------------------------------------------

def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(name: str, a: Tensor, b: Tensor) -> None:
    try:
        out = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        out = None
    if out != a.shape:
        raise ValueError(f"{name}: shape {b.shape} cannot be broadcast onto {a.shape}")


# -- elementwise -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return Tensor._from_op(
        a.data + b.data, (a, b), lambda g: (g, unbroadcast(g, b.shape)), a.layout
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return Tensor._from_op(
        a.data - b.data, (a, b), lambda g: (g, -unbroadcast(g, b.shape)), a.layout
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data
    return Tensor._from_op(
        ad * bd, (a, b), lambda g: (g * bd, unbroadcast(g * ad, b.shape)), a.layout
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data
    return Tensor._from_op(
        ad / bd,
        (a, b),
        lambda g: (g / bd, unbroadcast(-g * ad / (bd * bd), b.shape)),
        a.layout,
    )


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), a.layout)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), a.layout)


def log(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._from_op(np.log(ad), (a,), lambda g: (g / ad,), a.layout)


def elementwise(op: str, a, b) -> Tensor:
    """Dispatch ``add``/``sub``/``mul`` by name."""
    try:
        fn = {"add": add, "sub": sub, "mul": mul}[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


# -- linear algebra ----------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ValueError(f"matmul batch dimensions incompatible: {a.shape} @ {b.shape}") from None
    ad, bd = a.data, b.data

    def _back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return unbroadcast(ga, ad.shape), unbroadcast(gb, bd.shape)

    return Tensor._from_op(ad @ bd, (a, b), _back)


# -- reductions --------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape

    def _back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return Tensor._from_op(a.data.sum(axis=axes, keepdims=keepdims), (a,), _back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes]))
    shape = a.shape

    def _back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape),)

    return Tensor._from_op(a.data.mean(axis=axes, keepdims=keepdims), (a,), _back)


# -- shape manipulation ------------------------------------------------

def reshape(a: Tensor, shape, layout: str = "flat") -> Tensor:
    shape = tuple(int(s) for s in shape)
    src = a.shape
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), layout)


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._from_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape

    def _back(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return Tensor._from_op(a.data[index], (a,), _back)


def pad(a: Tensor, widths) -> Tensor:
    """Zero-pad; ``widths`` is a per-axis sequence of (before, after)."""
    widths = tuple((int(lo), int(hi)) for lo, hi in widths)
    if all(lo == 0 and hi == 0 for lo, hi in widths):
        return a
    crop = tuple(slice(lo, lo + s) for (lo, _), s in zip(widths, a.shape))
    return Tensor._from_op(np.pad(a.data, widths), (a,), lambda g: (g[crop],), a.layout)


def roll(a: Tensor, shift, axis) -> Tensor:
    shift = tuple(shift) if isinstance(shift, (tuple, list)) else (shift,)
    axis = tuple(axis) if isinstance(axis, (tuple, list)) else (axis,)
    back = tuple(-s for s in shift)
    return Tensor._from_op(
        np.roll(a.data, shift, axis), (a,), lambda g: (np.roll(g, back, axis),), a.layout
    )


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(
        np.concatenate([t.data for t in tensors], axis=axis), tensors, _back, tensors[0].layout
    )


def take(a: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows of ``a`` (axis 0) by an integer index array of any shape."""
    index = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def _back(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._from_op(a.data[index], (a,), _back)


def ones_like(a: Tensor) -> Tensor:
    return Tensor(np.ones(a.shape), layout=a.layout)


def zeros_like(a: Tensor) -> Tensor:
    return Tensor(np.zeros(a.shape), layout=a.layout)
