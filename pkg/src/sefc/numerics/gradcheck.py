"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    worst: str = ""
    per_tensor: dict = field(default_factory=dict)


def _scalar(value):
    data = value.data if isinstance(value, Tensor) else np.asarray(value)
    if data.size != 1:
        raise ValueError(f"gradient_check: function must return a scalar, got shape {data.shape}")
    v = float(data.reshape(()))
    if not np.isfinite(v):
        raise FloatingPointError("gradient_check: f(x) is not finite")
    return v


def relative_error(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def gradient_check(f, x, step=1e-6, tol=1e-4, indices=None):
    """Compare reverse-mode gradients of scalar ``f`` against central differences.

    ``x`` is a single Tensor or a mapping name -> Tensor; every entry is perturbed
    in place and restored. ``indices`` optionally restricts the checked coordinates
    per tensor (mapping name -> flat index array).
    """
    if not 1e-6 <= step <= 1e-4:
        raise ValueError(f"gradient_check: step {step} outside [1e-6, 1e-4]")
    tensors = x if isinstance(x, dict) else {"x": x}
    flags = {}
    for name, t in tensors.items():
        if t.dtype != np.float64:
            raise TypeError("gradient_check: tensors must be double precision")
        t.data = np.ascontiguousarray(t.data)
        flags[name] = t.requires_grad
        t.grad = None
        t.requires_grad = True

    out = f()
    _scalar(out)
    out.backward()
    analytic = {name: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy()
                for name, t in tensors.items()}

    report = GradCheckReport(max_rel_err=0.0, passed=True)
    with no_grad():
        for name, t in tensors.items():
            flat = t.data.reshape(-1)
            coords = range(flat.size) if indices is None or name not in indices else indices[name]
            numeric = np.zeros(flat.size)
            worst = 0.0
            for i in coords:
                orig = flat[i]
                flat[i] = orig + step
                fp = _scalar(f())
                flat[i] = orig - step
                fm = _scalar(f())
                flat[i] = orig
                numeric[i] = (fp - fm) / (2 * step)
                err = relative_error(analytic[name].reshape(-1)[i], numeric[i])
                worst = max(worst, float(err))
            report.per_tensor[name] = worst
            if worst > report.max_rel_err:
                report.max_rel_err = worst
                report.worst = name
    for name, t in tensors.items():
        t.requires_grad = flags[name]
        t.grad = None
    report.passed = report.max_rel_err <= tol
    return report


def _probe(t, weights, *more):
    """sum(t * weights) (+ further tensor/weight pairs) as one node, so a case
    exercises no primitive but its own."""
    from .tensor import _make

    pairs = [(t, np.asarray(weights))] + [(more[i], np.asarray(more[i + 1])) for i in range(0, len(more), 2)]
    value = sum(float(np.sum(x.data * w)) for x, w in pairs)
    return _make(np.asarray(value), tuple(x for x, _ in pairs), lambda g: tuple(g * w for _, w in pairs), "probe")


def _primitive_cases(rng):
    from . import tensor as T

    def r(*shape):
        return T.Tensor(rng.normal(size=shape), requires_grad=True)

    a, b, bt = r(3, 4), r(3, 4), r(4, 3)
    c = T.Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    w, bias = r(5, 16), r(16)
    h0, c0, xin = r(2, 4), r(2, 4), r(2, 1)
    gain, shift = r(4), r(4)
    idx = np.array([[0, 2], [1, 1]])
    mask = np.array([[True, False, False, True]] * 3)

    def p(*shape):
        return rng.normal(size=shape)

    p34, p43, p33, p3, p23, p38, p234, p224, p24 = (p(3, 4), p(4, 3), p(3, 3), p(3), p(2, 3), p(3, 8),
                                                   p(2, 3, 4), p(2, 2, 4), p(2, 4))
    p24b = p(2, 4)

    def lstm():
        hn, cn = T.lstm_cell_step(xin, h0, c0, w, bias)
        return _probe(hn, p24, cn, p24b)

    def unary(op, fn):
        return op, (lambda: _probe(fn(a), p34), {"a": a})

    cases = dict([
        unary("square", T.square), unary("exp", T.exp), unary("sigmoid", T.sigmoid), unary("tanh", T.tanh),
        unary("gelu", T.gelu), unary("softmax", lambda x: T.softmax(x, -1)),
        unary("standardize", lambda x: T.standardize(x, -1)), unary("clip", lambda x: T.clip(x, -0.5, 0.5)),
        unary("masked_fill", lambda x: T.masked_fill(x, mask, 0.0)),
    ])
    cases.update({
        "add": (lambda: _probe(T.add(a, b), p34), {"a": a, "b": b}),
        "sub": (lambda: _probe(T.sub(a, b), p34), {"a": a, "b": b}),
        "mul": (lambda: _probe(T.mul(a, b), p34), {"a": a, "b": b}),
        "div": (lambda: _probe(T.div(a, c), p34), {"a": a, "c": c}),
        "layer_norm": (lambda: _probe(T.layer_norm(a, gain, shift), p34), {"a": a, "gain": gain, "shift": shift}),
        "matmul": (lambda: _probe(T.matmul(a, bt), p33), {"a": a, "b": bt}),
        "mean": (lambda: _probe(T.mean(a, axis=1), p3), {"a": a}),
        "sum": (lambda: _probe(T.sum_(a, axis=1), p3), {"a": a}),
        "reshape": (lambda: _probe(T.reshape(a, (4, 3)), p43), {"a": a}),
        "transpose": (lambda: _probe(T.transpose(a), p43), {"a": a}),
        "slice": (lambda: _probe(T.getitem(a, (slice(0, 2), slice(1, 4))), p23), {"a": a}),
        "concat": (lambda: _probe(T.concat([a, b], axis=-1), p38), {"a": a, "b": b}),
        "stack": (lambda: _probe(T.stack([a, b], axis=0), p234), {"a": a, "b": b}),
        "take_rows": (lambda: _probe(T.take_rows(a, idx), p224), {"a": a}),
        "lstm_cell": (lstm, {"x": xin, "h": h0, "c": c0, "weight": w, "bias": bias}),
    })
    return cases


def primitive_suite(seed=0, step=1e-6, tol=1e-4):
    """Gradient-check every primitive in isolation; returns {op: GradCheckReport}."""
    rng = np.random.Generator(np.random.Philox(seed))
    return {op: gradient_check(f, x, step=step, tol=tol) for op, (f, x) in _primitive_cases(rng).items()}
