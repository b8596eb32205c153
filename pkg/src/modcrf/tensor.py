"""Dense float64 tensors with reverse-mode differentiation.

Every op records a closure mapping the output gradient to one gradient per
input. ``backward`` walks the recorded graph in reverse topological order and
accumulates (``+=``) into ``.grad`` of leaves that require gradients, so
several losses sharing leaves can be back-propagated one after the other.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, DomainError, UsageError

DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference, dev evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_retain", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._retain = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def retain_grad(self) -> "Tensor":
        """Keep the gradient of an interior node after ``backward``."""
        self._retain = True
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return elementwise(self, "neg")

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A named trainable leaf."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._retain = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- arithmetic --------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return _make(data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise DimensionError(f"cannot subtract shapes {a.shape} and {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return _make(data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    """Broadcasting product; ``hadamard`` is the shape-strict version."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc
    ad, bd = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _make(data, (a, b), backward)


def hadamard(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard needs identical shapes, got {a.shape} and {b.shape}")
    return mul(a, b)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    data = ad @ bd

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                k = ad.shape[-1]
                gb = ad.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(data, (a, b), backward)


# -- elementwise ----------------------------------------------------------------
def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


ELEMENTWISE = ("sigmoid", "tanh", "exp", "log", "neg", "relu")


def elementwise(x, f: str) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    if f == "sigmoid":
        y = _sigmoid(xd)
        return _make(y, (x,), lambda g: (g * y * (1.0 - y),))
    if f == "tanh":
        y = np.tanh(xd)
        return _make(y, (x,), lambda g: (g * (1.0 - y * y),))
    if f == "exp":
        y = np.exp(xd)
        return _make(y, (x,), lambda g: (g * y,))
    if f == "log":
        if np.any(xd <= 0):
            raise DomainError("log of a non-positive entry")
        return _make(np.log(xd), (x,), lambda g: (g / xd,))
    if f == "neg":
        return _make(-xd, (x,), lambda g: (-g,))
    if f == "relu":
        pos = xd > 0
        return _make(np.where(pos, xd, 0.0), (x,), lambda g: (g * pos,))
    raise UsageError(f"unknown elementwise function {f!r}; expected one of {ELEMENTWISE}")


def sigmoid(x) -> Tensor:
    return elementwise(x, "sigmoid")


def tanh(x) -> Tensor:
    return elementwise(x, "tanh")


def exp(x) -> Tensor:
    return elementwise(x, "exp")


def log(x) -> Tensor:
    return elementwise(x, "log")


def relu(x) -> Tensor:
    return elementwise(x, "relu")


# -- structural -----------------------------------------------------------------
def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat of an empty list")
    if len(parts) == 1:
        return parts[0]
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(
            f"cannot concatenate shapes {[p.shape for p in parts]} along axis {axis}"
        ) from exc
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(data, tuple(parts), backward)


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    expanded = []
    for p in parts:
        ax = axis if axis >= 0 else p.ndim + 1 + axis
        expanded.append(reshape(p, p.shape[:ax] + (1,) + p.shape[ax:]))
    return concat(expanded, axis=axis)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {old} to {shape}") from exc
    return _make(data, (x,), lambda g: (g.reshape(old),))


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def take(x, index) -> Tensor:
    """``x[index]`` for basic or advanced numpy indices (the slice/gather primitive)."""
    x = as_tensor(x)
    data = x.data[index]
    if not isinstance(data, np.ndarray):
        data = np.asarray(data, dtype=DTYPE)
    shape = x.shape
    basic = _is_basic(index)

    def backward(g):
        full = np.zeros(shape, dtype=DTYPE)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(data, (x,), backward)


def gather(table, ids, axis: int = 0) -> Tensor:
    """Select entries of ``table`` along ``axis`` (embedding lookup when axis=0)."""
    ids = np.asarray(ids, dtype=np.intp)
    index = (slice(None),) * axis + (ids,)
    return take(table, index)


def where(cond, a, b) -> Tensor:
    """Entrywise selection; unlike mask arithmetic it is safe when the unselected side is infinite."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    data = np.where(cond, a.data, b.data)
    sa, sb = a.shape, b.shape

    def backward(g):
        return (
            _unbroadcast(np.where(cond, g, 0.0), sa) if a.requires_grad else None,
            _unbroadcast(np.where(cond, 0.0, g), sb) if b.requires_grad else None,
        )

    return _make(data, (a, b), backward)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    data = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=DTYPE)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(data, (x,), backward)


def logsumexp(x, axis: int = -1) -> Tensor:
    """log(sum(exp(x))) along ``axis`` with max subtraction; all -inf slices give -inf."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[axis] == 0:
        raise DomainError("logsumexp over an empty axis")
    xd = x.data
    m = np.max(xd, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(xd - m), axis=axis, keepdims=True)) + m

    def backward(g):
        with np.errstate(invalid="ignore"):
            w = np.exp(xd - out)
        w = np.where(np.isnan(w), 0.0, w)
        return (w * np.expand_dims(g, axis),)

    return _make(np.squeeze(out, axis=axis), (x,), backward)


def softmax_nll(logits, targets) -> Tensor:
    """Summed per-row negative log softmax at ``targets`` (rows along the last axis)."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.intp)
    lse = logsumexp(logits, axis=-1)
    rows = np.arange(targets.size)
    flat = reshape(logits, (-1, logits.shape[-1]))
    picked = take(flat, (rows, targets.reshape(-1)))
    return tsum(lse) - tsum(picked)


def dropout(x, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or rate is 0."""
    if rng is None or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return mul(x, Tensor(mask))


# -- reverse pass -----------------------------------------------------------
def _topo_order(root: Tensor) -> list:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def _propagate(root: Tensor, seed: np.ndarray) -> dict:
    grads = {id(root): seed}
    for node in _topo_order(root):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf or node._retain:
            grads[("final", id(node))] = (node, g)
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return grads


def backward(root: Tensor, grad=None) -> None:
    """Accumulate d(root)/d(leaf) into every reachable leaf's ``.grad``."""
    if not isinstance(root, Tensor):
        raise UsageError("backward needs a Tensor root")
    if grad is None:
        if root.data.size != 1:
            raise UsageError(f"backward root must be scalar, got shape {root.shape}")
        grad = np.ones_like(root.data)
    if not root.requires_grad:
        return
    for key, value in _propagate(root, np.asarray(grad, dtype=DTYPE)).items():
        if isinstance(key, tuple):
            node, g = value
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g


def gradients(root: Tensor, inputs: Iterable[Tensor]) -> list:
    """Gradients of scalar ``root`` w.r.t. ``inputs`` without touching any ``.grad``.

    ``inputs`` may be interior nodes; each must have been marked with
    ``retain_grad`` (or be a leaf) for its gradient to be reported.
    """
    if root.data.size != 1:
        raise UsageError(f"gradients root must be scalar, got shape {root.shape}")
    inputs = list(inputs)
    if not root.requires_grad:
        return [np.zeros_like(t.data) for t in inputs]
    found = {}
    for key, value in _propagate(root, np.ones_like(root.data)).items():
        if isinstance(key, tuple):
            found[key[1]] = value[1]
    return [found.get(id(t), np.zeros_like(t.data)) for t in inputs]


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
