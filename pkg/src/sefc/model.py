"""The assembled forecaster: encoder -> semantic alignment -> TSCC -> frozen backbone -> decoder."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .adapter import TimeAdapter
from .backbone import Backbone, BackboneConfig
from .config import RunConfig
from .data import segment
from .embedding import SemanticProjection, TimeEncoder, VocabularyTable, load_embedding_table
from .forecast import Decoder
from .numerics import Linear, Module, Tensor, as_tensor
from .tscc import CrossAlign, Tscc, TsccOutput


def child_rng(seed: int, name: str) -> np.random.Generator:
    """Independent Philox stream per component, so optional parts never shift other weights."""
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])
    return np.random.Generator(np.random.Philox(seq))


@dataclass
class ForwardOutput:
    prediction: Tensor
    H: Tensor
    prototypes: Tensor
    J: Tensor
    tokens: Tensor
    Y: Tensor
    tscc: TsccOutput | None = None


class SeLLM(Module):
    def __init__(self, cfg: RunConfig, seed: int | None = None):
        cfg.validate()
        self.cfg = cfg
        seed = cfg.seed if seed is None else seed
        self.seed = seed
        d, m = cfg.data, cfg.model
        D, Dl = m.d_model, m.d_llm
        self.context_length = d.context_length
        self.patch_len = d.patch_len
        self.n_segments = d.context_length // d.patch_len
        self.horizon = d.horizon
        self.trained = False

        vocab_width = m.vocab_width or D
        fallback = (m.vocab_size, vocab_width, child_rng(seed, "vocabulary"))
        if m.vocab_path:
            self.vocabulary = load_embedding_table(m.vocab_path, fallback)
        else:
            self.vocabulary = VocabularyTable.random(*fallback)
        self.encoder = TimeEncoder(d.patch_len, D, child_rng(seed, "encoder"), m.encoder_hidden or None)
        self.semantic = SemanticProjection(
            self.vocabulary.vocab_size, m.n_prototypes, self.vocabulary.width, D,
            child_rng(seed, "semantic"), bias=m.projection_bias,
        )
        self.align = CrossAlign(D, m.align_heads, child_rng(seed, "align"))
        t = cfg.tscc
        if m.use_tscc:
            self.tscc = Tscc(D, Dl, child_rng(seed, "tscc"), t.k_top, t.vae_hidden or None,
                             t.vae_latent or None, t.gate_hidden or None)
            self.align_proj = None
        else:
            self.tscc = None
            self.align_proj = Linear(D, Dl, child_rng(seed, "align_proj"))

        bcfg = BackboneConfig(m.layers, m.heads, Dl, m.ffn_width, m.max_positions, m.frozen)
        adapter_factory = None
        if m.use_adapter:
            a = cfg.adapter
            adapter_rng = child_rng(seed, "adapter")

            def adapter_factory():
                return TimeAdapter(Dl, adapter_rng, a.rank or None, a.hidden or None, a.scale, a.topology)

        self.backbone = Backbone(bcfg, child_rng(seed, "backbone"), adapter_factory)
        self.decoder = Decoder(self.n_segments, Dl, d.horizon, child_rng(seed, "decoder"),
                               m.decoder_hidden or None, m.decoder_mode)
        self.dtype = np.dtype(np.float64)

    def astype(self, dtype):
        super().astype(dtype)
        self.dtype = np.dtype(dtype)
        return self

    def forward(self, context, rng=None, deterministic=True, noise=None) -> ForwardOutput:
        """``context`` is an instance-normalized [B, L] array."""
        context = np.asarray(context.data if isinstance(context, Tensor) else context)
        segments = as_tensor(segment(context, self.patch_len).astype(self.dtype))
        H = self.encoder(segments)
        prototypes = self.semantic(self.vocabulary)
        J = self.align(prototypes, H)
        if self.tscc is not None:
            parts = self.tscc(H, J, prototypes, rng=rng, deterministic=deterministic, noise=noise)
            Y = self.backbone(parts.GA, parts.GC)
            tokens = parts.GA + parts.GC
        else:
            parts = None
            tokens = self.align_proj(J)
            Y = self.backbone(tokens)
        return ForwardOutput(self.decoder(Y), H, prototypes, J, tokens, Y, parts)

    def __call__(self, context, rng=None, deterministic=True, noise=None) -> Tensor:
        return self.forward(context, rng, deterministic, noise).prediction

    def tscc_forward(self, segments, rng=None, deterministic=True, noise=None) -> TsccOutput:
        """Segments [B, N, P] through the encoder, alignment and TSCC; GA and GC are on the output."""
        if self.tscc is None:
            raise RuntimeError("model was built with model.use_tscc = false")
        H = self.encoder(as_tensor(np.asarray(segments, dtype=self.dtype)))
        prototypes = self.semantic(self.vocabulary)
        J = self.align(prototypes, H)
        return self.tscc(H, J, prototypes, rng=rng, deterministic=deterministic, noise=noise)


def partition_parameters(model: Module):
    """Split named parameters into (trainable, frozen) dicts; they are disjoint and cover all."""
    trainable, frozen = {}, {}
    for name, p in model.named_parameters():
        if not name:
            raise ValueError("unnamed parameter encountered")
        (trainable if p.trainable else frozen)[name] = p
    return trainable, frozen


def host_parameter_names(model: SeLLM):
    """Backbone host weights and the vocabulary table: everything the frozen policy covers."""
    names = []
    for name, _ in model.named_parameters():
        if name.startswith("vocabulary."):
            names.append(name)
        elif name.startswith("backbone.") and ".adapter." not in name and name != "backbone.positions":
            names.append(name)
    return names


GRADCHECK_CAPS = {"batch": 2, "segments": 8, "patch_len": 16, "width": 32}


@dataclass
class ModelGradCheck:
    report: object  # GradCheckReport
    n_coordinates: int
    seconds: float


def model_gradient_check(cfg: RunConfig, step=1e-4, tol=1e-4, batch=2, perturb_adapters=True) -> ModelGradCheck:
    """Finite-difference check of every trainable parameter of the composed model under an MSE loss.

    The instance (inputs, targets, latent noise and the adapter up-projections, which
    start at zero and would otherwise hide the recurrent path) is drawn from streams
    derived from ``cfg.seed``. The sampling latent path is used so the log-variance
    head is covered too.
    """
    import time

    from .numerics import gradient_check, mean, square

    d, m = cfg.data, cfg.model
    n_seg = d.context_length // d.patch_len
    caps = GRADCHECK_CAPS
    if batch > caps["batch"] or n_seg > caps["segments"] or d.patch_len > caps["patch_len"] \
            or max(m.d_model, m.d_llm) > caps["width"]:
        raise ValueError(f"gradcheck needs a tiny config (caps {caps}); got B={batch}, N={n_seg}, "
                         f"P={d.patch_len}, D={m.d_model}, D_llm={m.d_llm}")
    model = SeLLM(cfg)
    rng = child_rng(cfg.seed, "gradcheck")
    if perturb_adapters:
        for layer in model.backbone.layers:
            if layer.adapter is not None:
                up = layer.adapter.up.weight
                up.data = rng.normal(0.0, 0.3, size=up.shape)
    x = rng.normal(size=(batch, d.context_length))
    y = rng.normal(size=(batch, d.horizon))
    noise = None
    if model.tscc is not None:
        latent = model.tscc.vae.mu_head.weight.shape[1]
        noise = rng.normal(size=(batch, n_seg, latent))

    def f():
        out = model.forward(x, deterministic=noise is None, noise=noise)
        return mean(square(out.prediction - y))

    trainable, _ = partition_parameters(model)
    start = time.perf_counter()
    report = gradient_check(f, trainable, step=step, tol=tol)
    return ModelGradCheck(report, sum(p.size for p in trainable.values()), time.perf_counter() - start)
