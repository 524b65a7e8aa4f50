"""Parameters, modules and the small layer zoo the model is assembled from."""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .tensor import ShapeError, Tensor, gelu, layer_norm, lstm_cell_step, stack, zeros_state


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox): identical seed gives an identical draw sequence."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


class Parameter(Tensor):
    """A named model weight. Frozen parameters never receive gradients or updates."""

    __slots__ = ("trainable",)

    def __init__(self, data, trainable=True):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=trainable)
        self.trainable = bool(trainable)

    def set_trainable(self, flag: bool):
        self.trainable = bool(flag)
        self.requires_grad = bool(flag)
        if not flag:
            self.grad = None


class UnnamedParameterError(RuntimeError):
    pass


class Module:
    """Base class; parameters and submodules are discovered from instance attributes."""

    def _children(self):
        for key, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item
            elif isinstance(value, dict):
                for k, item in value.items():
                    if isinstance(item, (Parameter, Module)):
                        if not isinstance(k, str) or not k:
                            raise UnnamedParameterError(f"{key}: container key {k!r} cannot name a parameter")
                        yield f"{key}.{k}", item

    def named_parameters(self, prefix=""):
        seen = set()
        for name, child in self._children():
            full = f"{prefix}{name}"
            if isinstance(child, Parameter):
                if id(child) in seen:
                    continue
                seen.add(id(child))
                yield full, child
            else:
                for sub_name, p in child.named_parameters(full + "."):
                    if id(p) not in seen:
                        seen.add(id(p))
                        yield sub_name, p

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def set_trainable(self, flag: bool):
        for p in self.parameters():
            p.set_trainable(flag)

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        params = dict(self.named_parameters())
        if strict:
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            if missing or extra:
                raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, value in state.items():
            p = params[name]
            value = np.asarray(value)
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} does not match {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            if p.grad is not None:
                p.grad = p.grad.astype(dtype)
        return self

    def num_parameters(self, trainable=None):
        return sum(p.size for p in self.parameters() if trainable is None or p.trainable == trainable)


def parameter_hashes(module: Module) -> dict[str, str]:
    return {name: hashlib.sha256(np.ascontiguousarray(p.data).tobytes()).hexdigest()
            for name, p in module.named_parameters()}


class Linear(Module):
    def __init__(self, in_features, out_features, rng=None, bias=True, init="uniform", trainable=True):
        self.in_features = in_features
        self.out_features = out_features
        if init == "zeros" or rng is None:
            w = np.zeros((in_features, out_features))
        elif init == "normal":
            w = rng.normal(0.0, 1.0 / math.sqrt(in_features), size=(in_features, out_features))
        else:
            bound = 1.0 / math.sqrt(in_features)
            w = rng.uniform(-bound, bound, size=(in_features, out_features))
        self.weight = Parameter(w, trainable)
        if bias:
            if init in ("zeros", "normal") or rng is None:
                b = np.zeros(out_features)
            else:
                bound = 1.0 / math.sqrt(in_features)
                b = rng.uniform(-bound, bound, size=out_features)
            self.bias = Parameter(b, trainable)
        else:
            self.bias = None

    def __call__(self, x):
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"linear: expected width {self.in_features}, got input {x.shape}")
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, width, trainable=True):
        self.gain = Parameter(np.ones(width), trainable)
        self.bias = Parameter(np.zeros(width), trainable)

    def __call__(self, x):
        return layer_norm(x, self.gain, self.bias)


class MLP(Module):
    """Two affine maps with GELU between."""

    def __init__(self, in_features, hidden, out_features, rng, trainable=True):
        self.fc1 = Linear(in_features, hidden, rng, trainable=trainable)
        self.fc2 = Linear(hidden, out_features, rng, trainable=trainable)

    def __call__(self, x):
        return self.fc2(gelu(self.fc1(x)))


class LSTM(Module):
    """Single-layer LSTM run forward along axis 1 of a [B, T, in] input, zero initial state."""

    def __init__(self, in_features, hidden, rng, trainable=True):
        self.in_features = in_features
        self.hidden = hidden
        bound = 1.0 / math.sqrt(hidden)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(in_features + hidden, 4 * hidden)), trainable)
        self.bias = Parameter(rng.uniform(-bound, bound, size=4 * hidden), trainable)

    def __call__(self, x):
        if x.shape[1] == 0:
            raise ValueError("lstm: empty sequence")
        h, c = zeros_state(x, self.hidden), zeros_state(x, self.hidden)
        outputs = []
        for t in range(x.shape[1]):
            h, c = lstm_cell_step(x[:, t, :], h, c, self.weight, self.bias)
            outputs.append(h)
        return stack(outputs, axis=1)
