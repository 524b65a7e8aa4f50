"""Dense tensors with reverse-mode differentiation on top of numpy.

Every primitive builds its output eagerly and, when any input requires a
gradient, records a closure that maps the output gradient to input gradients.
``Tensor.backward`` walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
import math
from collections import defaultdict

import numpy as np
from scipy.special import expit

EPS = 1e-5

_GRAD_ENABLED = True
_FAULTS: dict[str, float] = {}
_COST_SCOPES: list[str] = []
COST = defaultdict(float)


class NonFiniteError(FloatingPointError):
    """Raised when a primitive produces NaN or Inf."""


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def inject_backward_fault(op: str, factor: float = 1.5):
    """Scale the backward rule of ``op`` by ``factor``; used for fault-injection tests."""
    _FAULTS[op] = factor
    try:
        yield
    finally:
        _FAULTS.pop(op, None)


@contextlib.contextmanager
def cost_scope(name: str):
    """Accumulate matmul multiply-adds issued inside the block into ``COST[name]``."""
    _COST_SCOPES.append(name)
    try:
        yield
    finally:
        _COST_SCOPES.pop()


def reset_cost():
    COST.clear()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.data.shape[0]

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    # -- backward ---------------------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward: implicit gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            factor = _FAULTS.get(node.op)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if factor is not None:
                    pg = pg * factor
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ---------------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _topological(root):
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
    return order


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _make(data, parents, backward, op):
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op}: produced non-finite values")
    out = object.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _binary_operands(a, b, op):
    if isinstance(a, Tensor):
        dtype = a.dtype
    elif isinstance(b, Tensor):
        dtype = b.dtype
    else:
        dtype = np.float64
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=dtype))
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=dtype))
    return a, b


def _broadcast_error(op, a, b):
    return ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# -- elementwise arithmetic -----------------------------------------------------

def add(a, b):
    a, b = _binary_operands(a, b, "add")
    sa, sb = a.shape, b.shape
    try:
        out = a.data + b.data
    except ValueError:
        raise _broadcast_error("add", a, b) from None
    return _make(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = _binary_operands(a, b, "sub")
    sa, sb = a.shape, b.shape
    try:
        out = a.data - b.data
    except ValueError:
        raise _broadcast_error("sub", a, b) from None
    return _make(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = _binary_operands(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    try:
        out = ad * bd
    except ValueError:
        raise _broadcast_error("mul", a, b) from None
    return _make(out, (a, b), backward, "mul")


def div(a, b):
    a, b = _binary_operands(a, b, "div")
    ad, bd = a.data, b.data
    try:
        out = ad / bd
    except ValueError:
        raise _broadcast_error("div", a, b) from None

    def backward(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return _make(out, (a, b), backward, "div")


def square(x):
    xd = x.data
    return _make(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


def exp(x):
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def clip(x, lo, hi):
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return _make(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,), "clip")


# -- activations ----------------------------------------------------------------

def sigmoid(x):
    out = expit(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x):
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x):
    """tanh-approximated GELU."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return _make(out, (x,), backward, "gelu")


def softmax(x, axis=-1):
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward, "softmax")


# -- normalization ----------------------------------------------------------------

def _check_axis(x, axis, op):
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for shape {x.shape}")
    if x.shape[axis] == 0:
        raise ShapeError(f"{op}: zero-extent axis {axis} in shape {x.shape}")


def standardize(x, axis=-1, eps=EPS):
    """(x - mean) / (std + eps) along ``axis`` with the population std."""
    x = as_tensor(x)
    _check_axis(x, axis, "standardize")
    if eps < 0:
        raise ValueError("standardize: eps must be non-negative")
    xd = x.data
    xc = xd - xd.mean(axis=axis, keepdims=True)
    sigma = np.sqrt((xc * xc).mean(axis=axis, keepdims=True))
    denom = sigma + eps
    if eps == 0:
        denom = np.where(sigma > 0, denom, 1.0)
    out = xc / denom

    def backward(g):
        safe_sigma = np.where(sigma > 0, sigma, 1.0)
        gm = g.mean(axis=axis, keepdims=True)
        proj = (g * xc).mean(axis=axis, keepdims=True)
        dx = (g - gm) / denom - xc * proj / (denom * denom * safe_sigma)
        return (dx,)

    return _make(out, (x,), backward, "standardize")


def layer_norm(x, gain, bias, eps=EPS):
    """Normalize over the last axis with (x - mean) / sqrt(var + eps), then scale and shift."""
    xd = x.data
    if gain.shape != (xd.shape[-1],) or bias.shape != (xd.shape[-1],):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs input {x.shape}")
    xc = xd - xd.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def backward(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(xd.ndim - 1))
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _make(out, (x, gain, bias), backward, "layer_norm")


# -- linear algebra -----------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd
    if _COST_SCOPES:
        flops = out.size * a.shape[-1]
        for scope in _COST_SCOPES:
            COST[scope] += flops

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(out, (a, b), backward, "matmul")


# -- reductions and shape ops ----------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None, keepdims=False):
    shape = x.shape
    axes = _norm_axes(axis, x.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axes, keepdims=keepdims)), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    shape = x.shape
    axes = _norm_axes(axis, x.ndim)
    count = 1
    for a in axes:
        count *= shape[a]
    if count == 0:
        raise ShapeError(f"mean: empty reduction over axes {axes} of {shape}")

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _make(np.asarray(x.data.mean(axis=axes, keepdims=keepdims)), (x,), backward, "mean")


def reshape(x, shape):
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {src} into {shape}") from None
    return _make(out, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def getitem(x, index):
    shape = x.shape

    parts = index if isinstance(index, tuple) else (index,)
    fancy = any(isinstance(p, (list, np.ndarray)) for p in parts)

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _make(np.array(x.data[index]), (x,), backward, "slice")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} disagree off axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != ref:
            raise ShapeError(f"stack: shapes {[t.shape for t in tensors]} differ")
    ax = axis % (len(ref) + 1)

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return _make(np.stack([t.data for t in tensors], axis=ax), tensors, backward, "stack")


def take_rows(x, indices):
    """Gather rows of a 2-D tensor: out[..., :] = x[indices[...], :]."""
    indices = np.asarray(indices)
    if x.ndim != 2:
        raise ShapeError(f"take_rows: expected a 2-D source, got {x.shape}")
    if indices.size and (indices.min() < 0 or indices.max() >= x.shape[0]):
        raise IndexError(f"take_rows: index out of range for {x.shape[0]} rows")
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, indices.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _make(x.data[indices], (x,), backward, "take_rows")


def masked_fill(x, mask, value):
    mask = np.asarray(mask, dtype=bool)
    keep = ~mask
    return _make(np.where(mask, value, x.data), (x,), lambda g: (g * keep,), "masked_fill")


# -- recurrent cell -------------------------------------------------------------------

def lstm_cell_step(x, h, c, weight, bias):
    """One LSTM step; gates packed as [input, forget, cell, output] along the last axis.

    ``weight`` has shape [in + hidden, 4 * hidden]. Returns (h_new, c_new).
    """
    hidden = h.shape[-1]
    if weight.shape != (x.shape[-1] + hidden, 4 * hidden) or bias.shape != (4 * hidden,):
        raise ShapeError(
            f"lstm_cell_step: weight {weight.shape} / bias {bias.shape} do not fit "
            f"input {x.shape} and state {h.shape}"
        )
    xh = np.concatenate([x.data, h.data], axis=-1)
    z = xh @ weight.data + bias.data
    i = expit(z[..., :hidden])
    f = expit(z[..., hidden:2 * hidden])
    g = np.tanh(z[..., 2 * hidden:3 * hidden])
    o = expit(z[..., 3 * hidden:])
    c_prev = c.data
    c_new = f * c_prev + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    n_in = x.shape[-1]

    def gate_grads(dc):
        dz = np.concatenate([dc * g * i * (1 - i), dc * c_prev * f * (1 - f),
                             dc * i * (1 - g * g), np.zeros_like(dc)], axis=-1)
        return dz

    def backward_from(dh, dc_total):
        do = dh * tc
        dz = gate_grads(dc_total)
        dz[..., 3 * hidden:] = do * o * (1 - o)
        dxh = dz @ weight.data.T
        red = tuple(range(dz.ndim - 1))
        dw = xh.reshape(-1, xh.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])
        return dxh[..., :n_in], dxh[..., n_in:], dc_total * f, dw, dz.sum(axis=red)

    # h_new and c_new share one cached forward; each output carries its own rule.
    def backward_h(dh):
        dc_total = dh * o * (1 - tc * tc)
        return backward_from(dh, dc_total)

    def backward_c(dc):
        return backward_from(np.zeros_like(dc), dc)

    parents = (x, h, c, weight, bias)
    return _make(h_new, parents, backward_h, "lstm_cell"), _make(c_new, parents, backward_c, "lstm_cell")


def zeros_state(x, width):
    """Zero recurrent state matching the batch extent and dtype of ``x``."""
    return Tensor(np.zeros((x.shape[0], width), dtype=x.dtype))
