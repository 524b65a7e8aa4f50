"""Frozen decoder-style transformer standing in for the language model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adapter import TimeAdapter
from .numerics import (
    LayerNorm,
    Linear,
    Module,
    Parameter,
    ShapeError,
    as_tensor,
    cost_scope,
    gelu,
    masked_fill,
    softmax,
)

MASK_VALUE = -1e30


@dataclass
class BackboneConfig:
    layers: int = 2
    heads: int = 4
    width: int = 64
    ffn_width: int = 256
    max_positions: int = 64
    frozen: bool = True

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("backbone needs at least one layer")
        if self.width % self.heads:
            raise ValueError(f"head count {self.heads} does not divide width {self.width}")


class AttentionLayer(Module):
    """Pre-norm block: x + attn(ln1(x)), then + ffn(ln2(x)); optional adapter on K and V."""

    def __init__(self, cfg: BackboneConfig, rng, adapter: TimeAdapter | None = None):
        host = not cfg.frozen
        D = cfg.width
        self.heads = cfg.heads
        self.ln1 = LayerNorm(D, trainable=host)
        self.query = Linear(D, D, rng, init="normal", trainable=host)
        self.key = Linear(D, D, rng, init="normal", trainable=host)
        self.value = Linear(D, D, rng, init="normal", trainable=host)
        self.out = Linear(D, D, rng, init="normal", trainable=host)
        self.ln2 = LayerNorm(D, trainable=host)
        self.ffn_in = Linear(D, cfg.ffn_width, rng, init="normal", trainable=host)
        self.ffn_out = Linear(cfg.ffn_width, D, rng, init="normal", trainable=host)
        self.adapter = adapter

    def __call__(self, x, return_weights=False):
        x = as_tensor(x)
        B, N, D = x.shape
        h, dh = self.heads, D // self.heads
        a = self.ln1(x)
        q, k, v = self.query(a), self.key(a), self.value(a)
        if self.adapter is not None:
            dk, dv = self.adapter(a)
            k = k + dk
            v = v + dv
        q = q.reshape(B, N, h, dh).transpose(0, 2, 1, 3)
        k = k.reshape(B, N, h, dh).transpose(0, 2, 3, 1)
        v = v.reshape(B, N, h, dh).transpose(0, 2, 1, 3)
        with cost_scope("attention"):
            scores = (q @ k) * (1.0 / math.sqrt(dh))
            causal = np.triu(np.ones((N, N), dtype=bool), k=1)
            weights = softmax(masked_fill(scores, causal, MASK_VALUE), axis=-1)
            mixed = weights @ v
        x = x + self.out(mixed.transpose(0, 2, 1, 3).reshape(B, N, D))
        x = x + self.ffn_out(gelu(self.ffn_in(self.ln2(x))))
        return (x, weights) if return_weights else x


class Backbone(Module):
    """Y = LLM(GA + GC) with a learned positional embedding over segment positions."""

    def __init__(self, cfg: BackboneConfig, rng, adapter_factory=None):
        self.cfg = cfg
        self.positions = Parameter(rng.normal(0.0, 0.02, size=(cfg.max_positions, cfg.width)))
        self.layers = [
            AttentionLayer(cfg, rng, adapter_factory() if adapter_factory else None)
            for _ in range(cfg.layers)
        ]
        self.ln_final = LayerNorm(cfg.width, trainable=not cfg.frozen)

    def embed(self, tokens):
        tokens = as_tensor(tokens)
        N = tokens.shape[1]
        if N > self.cfg.max_positions:
            raise ShapeError(f"backbone: {N} segments exceed max_positions {self.cfg.max_positions}")
        if tokens.shape[-1] != self.cfg.width:
            raise ShapeError(f"backbone: token width {tokens.shape[-1]} != {self.cfg.width}")
        return tokens + self.positions[:N]

    def __call__(self, GA, GC=None):
        x = as_tensor(GA) if GC is None else as_tensor(GA) + as_tensor(GC)
        x = self.embed(x)
        for layer in self.layers:
            x = layer(x)
        return self.ln_final(x)
