"""Time encoder and the projected vocabulary ("semantic space")."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import matrix_io
from .numerics import Linear, Module, Parameter, ShapeError, Tensor, as_tensor, gelu

log = logging.getLogger(__name__)


class TimeEncoder(Module):
    """Per-segment two-layer projection: H = F2(gelu(F1(segments)))."""

    def __init__(self, patch_len, d_model, rng, hidden=None):
        hidden = hidden or 2 * d_model
        self.patch_len = patch_len
        self.fc1 = Linear(patch_len, hidden, rng)
        self.fc2 = Linear(hidden, d_model, rng)

    def __call__(self, segments):
        segments = as_tensor(segments)
        if segments.shape[-1] != self.patch_len:
            raise ShapeError(f"time_encode: last extent {segments.shape[-1]} != segment length {self.patch_len}")
        return self.fc2(gelu(self.fc1(segments)))


class VocabularyTable(Module):
    """Frozen word-embedding matrix W [V, D_w]."""

    def __init__(self, weight, source="seeded-random"):
        self.weight = Parameter(weight, trainable=False)
        self.source = source

    @property
    def vocab_size(self):
        return self.weight.shape[0]

    @property
    def width(self):
        return self.weight.shape[1]

    @classmethod
    def random(cls, vocab_size, width, rng):
        return cls(rng.normal(0.0, 1.0, size=(vocab_size, width)), "seeded-random")


def load_embedding_table(path, fallback=None) -> VocabularyTable:
    """Load a portable matrix file as a frozen table.

    ``fallback`` is a ``(vocab_size, width, rng)`` triple used when ``path`` is absent.
    """
    path = Path(path) if path else None
    if path is None or not path.exists():
        if fallback is None:
            raise FileNotFoundError(f"embedding table {path} not found")
        log.info("embedding table %s absent; using seeded-random table", path)
        return VocabularyTable.random(*fallback)
    return VocabularyTable(matrix_io.read_matrix(path), source=str(path))


class SemanticProjection(Module):
    """Linear map along the vocabulary axis V -> Kp, plus a width adapter when D_w != D.

    l2[i, :] = sum_v A[i, v] W[v, :] + b[i]
    """

    def __init__(self, vocab_size, n_prototypes, vocab_width, d_model, rng, bias=True):
        if n_prototypes > vocab_size:
            raise ValueError(f"prototype count {n_prototypes} exceeds vocabulary size {vocab_size}")
        bound = 1.0 / np.sqrt(vocab_size)
        self.mix = Parameter(rng.uniform(-bound, bound, size=(n_prototypes, vocab_size)))
        self.bias = Parameter(np.zeros((n_prototypes, 1))) if bias else None
        self.width_adapter = Linear(vocab_width, d_model, rng) if vocab_width != d_model else None

    def __call__(self, table: VocabularyTable) -> Tensor:
        if table.vocab_size != self.mix.shape[1]:
            raise ShapeError(f"project_vocabulary: table has {table.vocab_size} rows, projection expects {self.mix.shape[1]}")
        l2 = self.mix @ table.weight
        if self.bias is not None:
            l2 = l2 + self.bias
        if self.width_adapter is not None:
            l2 = self.width_adapter(l2)
        return l2
