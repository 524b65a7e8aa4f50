"""Decoder head and autoregressive multi-horizon rollout."""

from __future__ import annotations

import math

import numpy as np

from .data import denormalize, instance_normalize
from .numerics import EPS, Linear, Module, ShapeError, as_tensor, gelu, no_grad


class Decoder(Module):
    """O = F2(gelu(F1(Y))).

    ``flatten`` maps the whole [N * D_llm] token sequence to tau values; ``segment``
    maps each token to tau / N values and concatenates them in segment order.
    """

    def __init__(self, n_segments, d_llm, horizon, rng, hidden=None, mode="flatten"):
        hidden = hidden or 2 * d_llm
        self.mode = mode
        self.n_segments = n_segments
        self.d_llm = d_llm
        self.horizon = horizon
        if mode == "flatten":
            self.fc1 = Linear(n_segments * d_llm, hidden, rng)
            self.fc2 = Linear(hidden, horizon, rng)
        elif mode == "segment":
            if horizon % n_segments:
                raise ValueError(f"segment decoder: horizon {horizon} not divisible by {n_segments} segments")
            self.fc1 = Linear(d_llm, hidden, rng)
            self.fc2 = Linear(hidden, horizon // n_segments, rng)
        else:
            raise ValueError(f"unknown decoder mode {mode!r}")

    def __call__(self, Y):
        Y = as_tensor(Y)
        B, N, D = Y.shape
        if N != self.n_segments or D != self.d_llm:
            raise ShapeError(f"decode: expected [B, {self.n_segments}, {self.d_llm}], got {Y.shape}")
        if self.mode == "flatten":
            return self.fc2(gelu(self.fc1(Y.reshape(B, N * D))))
        return self.fc2(gelu(self.fc1(Y))).reshape(B, self.horizon)


class UntrainedModelError(RuntimeError):
    pass


def rollout_normalized(model, context, horizon):
    """Shift-and-append rollout in normalized space; returns the first ``horizon`` values.

    ceil(T / tau) native calls; each prediction is appended and the oldest tau
    values dropped so the context keeps length L; the remainder T mod tau is
    handled by truncating the final block.
    """
    tau = model.horizon
    L = context.shape[1]
    steps = math.ceil(horizon / tau)
    ctx = np.asarray(context)
    preds = []
    with no_grad():
        for _ in range(steps):
            y = model(ctx, deterministic=True).data
            preds.append(y)
            ctx = np.concatenate([ctx, y], axis=1)[:, -L:]
    return np.concatenate(preds, axis=1)[:, :horizon]


def autoregressive_forecast(model, X, horizon, eps=EPS, require_trained=True):
    """Forecast ``horizon`` steps for raw contexts X [B, L].

    Normalization statistics come from the original context and are reused for the
    whole rollout. Inference always takes the deterministic latent path.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if require_trained and not getattr(model, "trained", False):
        raise UntrainedModelError("model has not been trained or loaded from a checkpoint")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    Xn, stats = instance_normalize(X, eps)
    Xn = Xn.astype(model.dtype)
    return denormalize(rollout_normalized(model, Xn, horizon), stats)
