"""Reverse-mode automatic differentiation over numpy arrays.

Each differentiable op builds an output :class:`Tensor` holding references to
its inputs and a closure mapping the output gradient to input gradients.
:func:`backward` visits the graph in reverse topological order. An optional
:class:`Tape` records every op executed while it is active, which is how
forward passes are compared for structural reproducibility.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np

_state = threading.local()


def default_dtype():
    return getattr(_state, "dtype", np.float32)


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new tensors (e.g. float64 for grad checks)."""
    old = default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = old


class ShapeError(ValueError):
    pass


class Tape:
    """Ordered record of executed ops: ``(op, input ids, output id, output shape)``."""

    def __init__(self):
        self.records = []

    def __enter__(self):
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.tapes.pop()

    def signature(self):
        """Structure of the recording with ids renumbered by first appearance."""
        ids = {}

        def rn(i):
            return ids.setdefault(i, len(ids))

        return [(op, tuple(rn(i) for i in ins), rn(out), shape)
                for op, ins, out, shape in self.records]


def _record(out, op, inputs):
    stack = getattr(_state, "tapes", None)
    if stack:
        rec = (op, tuple(id(t) for t in inputs), id(out), out.data.shape)
        for tape in stack:
            tape.records.append(rec)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "name",
                 "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype or default_dtype())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.parents = ()
        self.backward_fn = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}{', grad' if self.requires_grad else ''})"

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None):
        return mean(self, axis)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def parameter(data, name=None, dtype=None):
    return Tensor(data, requires_grad=True, name=name, dtype=dtype)


def _make(data, op, parents, backward_fn):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    needs = any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        _record(out, op, parents)
    else:
        out.parents = ()
        out.backward_fn = None
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    nd = g.ndim - len(shape)
    if nd:
        g = g.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise binary


def add(a, b):
    a, b = _pair(a, b)
    _check_broadcast("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, "add", (a, b), bw)


def sub(a, b):
    a, b = _pair(a, b)
    _check_broadcast("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, "sub", (a, b), bw)


def mul(a, b):
    a, b = _pair(a, b)
    _check_broadcast("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, "mul", (a, b), bw)


def div(a, b):
    a, b = _pair(a, b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make(out, "div", (a, b), bw)


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def matmul(a, b):
    """``a @ b`` for 2-D operands or stacks of matrices (numpy matmul rules)."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, "matmul", (a, b), bw)


def cross(a, b):
    """Cross product along the last axis (size 3)."""
    a, b = _pair(a, b)
    if a.shape[-1] != 3 or b.shape[-1] != 3:
        raise ShapeError(f"cross: last axis must be 3, got {a.shape} and {b.shape}")
    _check_broadcast("cross", a, b)

    def bw(g):
        return (_unbroadcast(np.cross(b.data, g), a.shape),
                _unbroadcast(np.cross(g, a.data), b.shape))

    return _make(np.cross(a.data, b.data), "cross", (a, b), bw)


# ---------------------------------------------------------------------------
# elementwise unary


def tanh(x):
    out = np.tanh(x.data)
    return _make(out, "tanh", (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x):
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def relu(x):
    mask = x.data > 0
    return _make(x.data * mask, "relu", (x,), lambda g: (g * mask,))


def sqrt(x):
    out = np.sqrt(x.data)
    return _make(out, "sqrt", (x,), lambda g: (0.5 * g / out,))


def square(x):
    return _make(x.data * x.data, "square", (x,), lambda g: (2.0 * g * x.data,))


# ---------------------------------------------------------------------------
# reductions


def tsum(x, axis=None, keepdims=False):
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), "sum", (x,), bw)


def mean(x, axis=None):
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    out = np.mean(x.data, axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).astype(x.dtype),)

    return _make(np.asarray(out, dtype=x.dtype), "mean", (x,), bw)


def max_over_axis(x, axis):
    """Max along ``axis``; the gradient goes to the first maximal slot only."""
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)

    def bw(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _make(out, "max", (x,), bw)


def linear_relu_maxpool(x, w, b):
    """``max_p relu(x[f, p] @ w + b)`` for ``x`` of shape ``(F, P, C)``; returns ``(F, K)``.

    Same value as ``max_over_axis(relu(x @ w + b), 1)`` without materializing
    the ``(F, P, K)`` activations on the tape. The max is taken over ``x @ w``
    (the bias is constant across points) and the gradient goes to the first
    maximal point, so the backward pass only touches ``F * K`` rows.
    """
    from .._kernels import maxpool_scatter

    x, w = _pair(x, w)
    b = as_tensor(b, like=w)
    if x.ndim != 3 or w.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"linear_relu_maxpool: bad shapes {x.shape}, {w.shape}, {b.shape}")
    F, P, C = x.shape
    y = np.matmul(w.data.T, np.swapaxes(x.data, 1, 2))  # (F, K, P), points contiguous
    idx = np.argmax(y, axis=-1)
    pre = y.max(axis=-1) + b.data
    del y
    mask = pre > 0
    out = pre * mask

    def bw(g):
        gm = np.ascontiguousarray(g * mask, dtype=x.dtype)
        gx = gw = gb = None
        if x.requires_grad:
            gx = maxpool_scatter(idx, gm, np.ascontiguousarray(w.data), P)
        if w.requires_grad:
            rows = (idx + np.arange(F)[:, None] * P).reshape(-1)
            xs = x.data.reshape(F * P, C).take(rows, axis=0).reshape(F, -1, C)  # (F, K, C)
            gw = np.ascontiguousarray((xs * gm[..., None]).sum(axis=0).T)
        if b.requires_grad:
            gb = gm.sum(axis=0)
        return gx, gw, gb

    return _make(out, "linear_relu_maxpool", (x, w, b), bw)


def mse(a, b):
    """Mean of squared differences."""
    a, b = _pair(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes differ {a.shape} vs {b.shape}")
    d = a.data - b.data
    n = d.size

    def bw(g):
        ga = (2.0 / n) * g * d
        return ga, -ga

    return _make(np.asarray(np.mean(d * d), dtype=a.dtype), "mse", (a, b), bw)


def sum_squared_error(a, b):
    """``sum((a - b)^2)`` over all entries."""
    a, b = _pair(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"sum_squared_error: shapes differ {a.shape} vs {b.shape}")
    d = a.data - b.data

    def bw(g):
        ga = 2.0 * g * d
        return ga, -ga

    return _make(np.asarray(np.sum(d * d), dtype=a.dtype), "sse", (a, b), bw)


# ---------------------------------------------------------------------------
# shape ops


def reshape(x, shape):
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}") from None
    return _make(out, "reshape", (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, "transpose", (x,), lambda g: (np.transpose(g, inv),))


def _is_basic(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)


def getitem(x, idx):
    out = x.data[idx]
    basic = _is_basic(idx)

    def bw(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] = g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return _make(np.array(out, copy=True), "slice", (x,), bw)


slice_ = getitem


def take(x, indices, axis=0):
    """Gather along ``axis``; repeated indices accumulate in the backward pass."""
    indices = np.asarray(indices, dtype=np.int64)
    out = np.take(x.data, indices, axis=axis)

    def bw(g):
        gx = np.zeros_like(x.data)
        gm = np.moveaxis(gx, axis, 0)
        np.add.at(gm, indices.reshape(-1), np.moveaxis(g, axis, 0).reshape((-1,) + gm.shape[1:]))
        return (gx,)

    return _make(out, "take", (x,), bw)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, "concat", tuple(tensors), bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in tensors]}") from None

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(out, "stack", tuple(tensors), bw)


# ---------------------------------------------------------------------------
# backward


def _topo(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data) if grad is None else np.asarray(grad, loss.dtype)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g.astype(node.dtype) if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg
