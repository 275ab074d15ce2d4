"""A small define-by-run reverse-mode differentiation engine over numpy.

Tensors are rank 0, 1 or 2 arrays of float64. Every op records its parents
and a closure that pushes the output gradient back to them; ``backward``
walks the recorded graph in reverse topological order.

Broadcasting is limited to matrix + row vector and tensor-with-scalar.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NonScalarLoss(ValueError):
    pass


_state = threading.local()


def _recording() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = _recording()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, value, requires_grad=False, name=None):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim > 2:
            raise ShapeMismatch(f"rank {value.ndim} tensors are not supported")
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # operator sugar
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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, backward_fn) -> Tensor:
    out = Tensor(value)
    parents = tuple(parents)
    if _recording() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.shape)
    else:
        t.grad += g


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if loss.value.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    order, seen = [], set()
    stack = [(loss, False)]
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
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            _accum(node, g)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


# elementwise arithmetic


def _check_broadcast(a, b):
    if a.shape == b.shape:
        return False
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return True
    raise ShapeMismatch(f"cannot combine shapes {a.shape} and {b.shape}")


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return add_scalar(a, float(b))
    if not isinstance(a, Tensor) and np.ndim(a) == 0:
        return add_scalar(b, float(a))
    a, b = _wrap(a), _wrap(b)
    row = _check_broadcast(a, b)

    def back(g):
        return g, (g.sum(axis=0) if row else g)

    return _make(a.value + b.value, (a, b), back)


def add_scalar(a, c: float) -> Tensor:
    a = _wrap(a)
    return _make(a.value + c, (a,), lambda g: (g,))


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor) and np.ndim(a) == 0:
        return add_scalar(scale(b, -1.0), float(a))
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return add_scalar(a, -float(b))
    a, b = _wrap(a), _wrap(b)
    row = _check_broadcast(a, b)

    def back(g):
        return g, -(g.sum(axis=0) if row else g)

    return _make(a.value - b.value, (a, b), back)


def scale(a, c: float) -> Tensor:
    a = _wrap(a)
    return _make(a.value * c, (a,), lambda g: (g * c,))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return scale(a, float(b))
    if not isinstance(a, Tensor) and np.ndim(a) == 0:
        return scale(b, float(a))
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"elementwise multiply needs equal shapes, got {a.shape} and {b.shape}")
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), lambda g: (g * bv, g * av))


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"elementwise divide needs equal shapes, got {a.shape} and {b.shape}")
    av, bv = a.value, b.value
    out = av / bv
    return _make(out, (a, b), lambda g: (g / bv, -g * out / bv))


# linear algebra and structure


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul of {a.shape} and {b.shape}")
    av, bv = a.value, b.value

    def back(g):
        if bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g @ bv.T, av.T @ g

    return _make(av @ bv, (a, b), back)


def concat(tensors, axis=1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    values = [t.value for t in tensors]
    if axis == 1 and any(v.ndim != 2 for v in values):
        raise ShapeMismatch("column concat needs matrices")
    try:
        out = np.concatenate(values, axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, back)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    old = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def gather(a, index) -> Tensor:
    """Rows (or entries) of ``a`` at ``index``; repeated indices allowed."""
    a = _wrap(a)
    index = np.asarray(index, dtype=np.int64)
    av = a.value

    def back(g):
        # scatter-add via a sort and reduceat; much faster than np.add.at
        out = np.zeros_like(av)
        flat = index.reshape(-1)
        if flat.size:
            order = np.argsort(flat, kind="stable")
            keys = flat[order]
            starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
            rows = g.reshape((flat.size,) + av.shape[1:])[order]
            out[keys[starts]] = np.add.reduceat(rows, starts, axis=0)
        return (out,)

    return _make(av[index], (a,), back)


def sum(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = _wrap(a)
    shape = a.shape
    return _make(np.sum(a.value), (a,), lambda g: (np.broadcast_to(g, shape),))


def mean(a) -> Tensor:
    a = _wrap(a)
    return scale(sum(a), 1.0 / a.value.size)


# nonlinearities


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    x = a.value
    # split by sign so exp never overflows
    ex = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def log2_1p(a) -> Tensor:
    a = _wrap(a)
    x = a.value
    return _make(np.log1p(x) / np.log(2.0), (a,), lambda g: (g / ((1.0 + x) * np.log(2.0)),))


# pooling over sorted segments (e.g. edges grouped by destination)


def _segments(seg, n_seg):
    seg = np.asarray(seg, dtype=np.int64)
    if seg.size and np.any(np.diff(seg) < 0):
        raise ValueError("segment ids must be sorted")
    starts = np.searchsorted(seg, np.arange(n_seg))
    counts = np.bincount(seg, minlength=n_seg)
    nonempty = counts > 0
    return seg, starts[nonempty], nonempty


def segment_sum(a, seg, n_seg) -> Tensor:
    """Sum rows of ``a`` sharing a segment id; empty segments give zeros."""
    a = _wrap(a)
    seg, starts, nonempty = _segments(seg, n_seg)
    out = np.zeros((n_seg,) + a.shape[1:])
    if starts.size:
        out[nonempty] = np.add.reduceat(a.value, starts, axis=0)
    return _make(out, (a,), lambda g: (g[seg],))


def segment_max(a, seg, n_seg) -> Tensor:
    """Per-segment maximum; the gradient goes to the first maximal row."""
    a = _wrap(a)
    x = a.value
    seg, starts, nonempty = _segments(seg, n_seg)
    out = np.zeros((n_seg,) + x.shape[1:])
    if not starts.size:
        return _make(out, (a,), lambda g: (np.zeros_like(x),))
    best = np.maximum.reduceat(x, starts, axis=0)
    out[nonempty] = best
    rows = np.arange(len(x)).reshape((-1,) + (1,) * (x.ndim - 1))
    cand = np.where(x == out[seg], rows, len(x))
    first = np.minimum.reduceat(cand, starts, axis=0)

    def back(g):
        gx = np.zeros_like(x)
        if x.ndim == 1:
            gx[first] = g[nonempty]
        else:
            gx[first, np.arange(x.shape[1])[None, :]] = g[nonempty]
        return (gx,)

    return _make(out, (a,), back)


# optimizer


@dataclass
class AdamState:
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState):
    """Bias-corrected ADAM update of ``params`` (name -> Tensor) in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.value)
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.value = p.value - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
