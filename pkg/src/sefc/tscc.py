"""Temporal-semantic cross-correlation: align TS embeddings with semantic prototypes,
split the joint space into anomaly / de-anomaly parts and gate them into backbone tokens.

Shapes: H and the joint space J are [B, N, D]; prototypes l2 and S are [Kp, D].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import (
    EPS,
    Linear,
    MLP,
    Module,
    ShapeError,
    Tensor,
    as_tensor,
    clip,
    concat,
    exp,
    gelu,
    mean,
    sigmoid,
    softmax,
    square,
    standardize,
    take_rows,
)

LOGVAR_CLAMP = 10.0


class CrossAlign(Module):
    """Multi-head cross-attention; queries from H, keys and values from the prototypes."""

    def __init__(self, d_model, heads, rng):
        if d_model % heads:
            raise ValueError(f"head count {heads} does not divide width {d_model}")
        self.heads = heads
        self.d_model = d_model
        self.query = Linear(d_model, d_model, rng)
        # a key bias only shifts every score of a query equally; softmax removes it
        self.key = Linear(d_model, d_model, rng, bias=False)
        self.value = Linear(d_model, d_model, rng)
        self.out = Linear(d_model, d_model, rng)

    def __call__(self, prototypes, H, return_weights=False):
        prototypes, H = as_tensor(prototypes), as_tensor(H)
        if prototypes.shape[-1] != H.shape[-1]:
            raise ShapeError(f"cross_align: prototype width {prototypes.shape[-1]} != embedding width {H.shape[-1]}")
        B, N, D = H.shape
        Kp = prototypes.shape[0]
        h, dh = self.heads, D // self.heads
        q = self.query(H).reshape(B, N, h, dh).transpose(0, 2, 1, 3)
        k = self.key(prototypes).reshape(Kp, h, dh).transpose(1, 2, 0)
        v = self.value(prototypes).reshape(Kp, h, dh).transpose(1, 0, 2)
        weights = softmax((q @ k) * (1.0 / math.sqrt(dh)), axis=-1)  # [B, h, N, Kp]
        mixed = (weights @ v).transpose(0, 2, 1, 3).reshape(B, N, D)
        J = self.out(mixed)
        return (J, weights) if return_weights else J


def enrich_prototypes(J, prototypes):
    """S = l2 + mean of J over batch and segments, broadcast over prototypes."""
    return as_tensor(prototypes) + mean(as_tensor(J), axis=(0, 1))


@dataclass
class Decomposition:
    anomaly: Tensor      # DC
    de_anomaly: Tensor   # DA
    mu: Tensor
    logvar: Tensor
    z: Tensor


def reparameterize(mu, logvar, noise):
    """z = mu + noise * exp(0.5 * logvar)."""
    return as_tensor(mu) + as_tensor(noise) * exp(as_tensor(logvar) * 0.5)


def kl_standard_normal(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)) averaged over latent elements."""
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    return mean((square(mu) + exp(logvar) - 1.0 - logvar) * 0.5)


class AmVae(Module):
    """Variational split of the joint space; trained only through the downstream loss."""

    def __init__(self, d_model, hidden, latent, rng):
        if not (hidden < d_model and latent <= hidden):
            raise ValueError(f"need latent {latent} <= hidden {hidden} < width {d_model}")
        self.encoder = Linear(d_model, hidden, rng)
        self.mu_head = Linear(hidden, latent, rng)
        self.logvar_head = Linear(hidden, latent, rng)
        self.decoder = Linear(latent, d_model, rng)

    def __call__(self, J, rng=None, deterministic=True, noise=None) -> Decomposition:
        J = as_tensor(J)
        hidden = gelu(self.encoder(J))
        mu = self.mu_head(hidden)
        logvar = clip(self.logvar_head(hidden), -LOGVAR_CLAMP, LOGVAR_CLAMP)
        if deterministic:
            z = mu
        else:
            if noise is None:
                if rng is None:
                    raise ValueError("amvae: sampling mode needs an rng or explicit noise")
                noise = rng.standard_normal(mu.shape).astype(mu.dtype)
            z = reparameterize(mu, logvar, noise)
        anomaly = self.decoder(z)
        return Decomposition(anomaly=anomaly, de_anomaly=J - anomaly, mu=mu, logvar=logvar, z=z)


def cross_correlation(H, S, eps=EPS):
    """M[b, n, i] = <std(H[b, n]), std(S[i])> / D, standardized along the width."""
    H, S = as_tensor(H), as_tensor(S)
    if H.shape[-1] != S.shape[-1]:
        raise ShapeError(f"cross_correlation: widths {H.shape[-1]} and {S.shape[-1]} differ")
    D = H.shape[-1]
    return (standardize(H, -1, eps) @ standardize(S, -1, eps).T) * (1.0 / D)


def topk_select(M, k_top):
    """Indices of the k_top largest entries per row of the last axis.

    Ties go to the lower index; output is ordered by descending value, then ascending index.
    """
    M = np.asarray(M.data if isinstance(M, Tensor) else M)
    Kp = M.shape[-1]
    if not 1 <= k_top <= Kp:
        raise ValueError(f"k_top {k_top} outside [1, {Kp}]")
    order = np.argsort(-M, axis=-1, kind="stable")
    return order[..., :k_top]


def infuse(part, S, indices):
    """part[b, n, :] * mean_j S[indices[b, n, j], :]."""
    gathered = take_rows(as_tensor(S), indices)  # [B, N, k, D]
    return as_tensor(part) * mean(gathered, axis=-2)


class ChannelGate(Module):
    """Attn = sigmoid(MLP([H, DX])); G = Attn * H + (1 - Attn) * J; out = F_llm(G)."""

    def __init__(self, d_model, d_llm, rng, hidden=None):
        hidden = hidden or 2 * d_model
        self.d_model = d_model
        self.mlp = MLP(2 * d_model, hidden, d_model, rng)
        self.to_llm = Linear(d_model, d_llm, rng)

    def fuse(self, H, DX, J):
        H, DX, J = as_tensor(H), as_tensor(DX), as_tensor(J)
        if H.shape != DX.shape or H.shape != J.shape:
            raise ShapeError(f"channel_gate: shapes H {H.shape}, DX {DX.shape}, J {J.shape} differ")
        attn = sigmoid(self.mlp(concat([H, DX], axis=-1)))
        return attn * H + (1.0 - attn) * J, attn

    def __call__(self, H, DX, J):
        fused, _ = self.fuse(H, DX, J)
        return self.to_llm(fused)


@dataclass
class TsccOutput:
    GA: Tensor
    GC: Tensor
    J: Tensor
    S: Tensor
    M: Tensor
    indices: np.ndarray
    decomposition: Decomposition


class Tscc(Module):
    def __init__(self, d_model, d_llm, rng, k_top=5, vae_hidden=None, vae_latent=None, gate_hidden=None):
        self.k_top = k_top
        self.vae = AmVae(d_model, vae_hidden or d_model // 2, vae_latent or d_model // 4, rng)
        self.gate_a = ChannelGate(d_model, d_llm, rng, gate_hidden)
        self.gate_c = ChannelGate(d_model, d_llm, rng, gate_hidden)

    def __call__(self, H, J, prototypes, rng=None, deterministic=True, noise=None) -> TsccOutput:
        S = enrich_prototypes(J, prototypes)
        parts = self.vae(J, rng=rng, deterministic=deterministic, noise=noise)
        M = cross_correlation(H, S)
        idx = topk_select(M, self.k_top)
        da = infuse(parts.de_anomaly, S, idx)
        dc = infuse(parts.anomaly, S, idx)
        GA = self.gate_a(H, da, J)
        GC = self.gate_c(H, dc, J)
        return TsccOutput(GA, GC, J, S, M, idx, parts)
