"""Run configuration: namespaced dataclasses and the flat ``key = value`` text format.

Example::

    seed = 7
    data.context_length = 96
    data.horizon = 24
    model.d_model = 32
    eval.horizons = 24, 48
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

SEED_ENV = "SEFC_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    path: str = ""
    context_length: int = 672
    horizon: int = 96
    patch_len: int = 96
    stride: int = 1
    channel_independent: bool = True
    # fractions when every entry is <= 1, otherwise step counts
    split: tuple = (0.7, 0.1, 0.2)
    eps: float = 1e-5


@dataclass
class ModelConfig:
    d_model: int = 64
    d_llm: int = 64
    encoder_hidden: int = 0
    vocab_size: int = 1000
    vocab_width: int = 0
    vocab_path: str = ""
    n_prototypes: int = 32
    align_heads: int = 4
    projection_bias: bool = True
    layers: int = 2
    heads: int = 4
    ffn_width: int = 256
    max_positions: int = 64
    frozen: bool = True
    decoder_mode: str = "flatten"
    decoder_hidden: int = 0
    use_tscc: bool = True
    use_adapter: bool = True


@dataclass
class TsccConfig:
    k_top: int = 5
    vae_hidden: int = 0
    vae_latent: int = 0
    gate_hidden: int = 0


@dataclass
class AdapterConfig:
    rank: int = 0
    hidden: int = 0
    scale: float = 1.0
    topology: str = "sequential"


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 3
    clip_norm: float = 1.0
    kl_weight: float = 0.0
    precision: str = "float64"
    max_steps: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.patience < 1 or self.clip_norm <= 0 or self.batch_size < 1:
            raise ConfigError("train: need lr > 0, patience >= 1, clip_norm > 0, batch_size >= 1")
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"train.precision must be float64 or float32, got {self.precision!r}")


@dataclass
class EvalConfig:
    horizons: tuple = (96, 192, 336, 720)
    seasonal_period: int = 1
    stride: int = 0
    max_windows: int = 0


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    tscc: TsccConfig = field(default_factory=TsccConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    out_dir: str = "runs/default"
    workers: int = 1

    def validate(self):
        d, m = self.data, self.model
        if d.context_length % d.patch_len:
            raise ConfigError(f"data.context_length {d.context_length} not divisible by data.patch_len {d.patch_len}")
        if d.context_length // d.patch_len > m.max_positions:
            raise ConfigError("model.max_positions is smaller than the segment count")
        if m.d_llm % m.heads or m.d_model % m.align_heads:
            raise ConfigError("head counts must divide model widths")
        if m.decoder_mode not in ("flatten", "segment"):
            raise ConfigError(f"model.decoder_mode must be flatten or segment, got {m.decoder_mode!r}")
        if m.decoder_mode == "segment" and d.horizon % (d.context_length // d.patch_len):
            raise ConfigError("segment decoder needs the horizon divisible by the segment count")
        if not 1 <= self.tscc.k_top <= m.n_prototypes:
            raise ConfigError(f"tscc.k_top {self.tscc.k_top} outside [1, {m.n_prototypes}]")
        if any(h < 1 for h in self.eval.horizons):
            raise ConfigError(f"eval.horizons must be >= 1, got {self.eval.horizons}")
        TrainConfig.__post_init__(self.train)
        return self


SECTIONS = ("data", "model", "tscc", "adapter", "train", "eval")


def _coerce(raw: str, typ, key):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is tuple:
            items = [s.strip() for s in raw.strip("()[]").split(",") if s.strip()]
            out = []
            for s in items:
                try:
                    out.append(int(s))
                except ValueError:
                    out.append(float(s))
            return tuple(out)
        return raw.strip("\"'")
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None


def _field_types(cls):
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def set_key(cfg: RunConfig, key: str, raw):
    parts = key.split(".")
    if len(parts) == 1:
        target, name = cfg, parts[0]
        if name in SECTIONS:
            raise ConfigError(f"unknown config key {key!r}")
    elif len(parts) == 2 and parts[0] in SECTIONS:
        target, name = getattr(cfg, parts[0]), parts[1]
    else:
        raise ConfigError(f"unknown config key {key!r}")
    types = _field_types(type(target))
    if name not in types:
        raise ConfigError(f"unknown config key {key!r}")
    value = raw if not isinstance(raw, str) else _coerce(raw, types[name], key)
    setattr(target, name, value)


def parse_config(text: str, cfg: RunConfig | None = None) -> RunConfig:
    cfg = cfg or RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        set_key(cfg, key.strip(), value)
    return cfg


def load_config(path=None, overrides=(), env=None) -> RunConfig:
    cfg = RunConfig()
    if path:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        parse_config(path.read_text(encoding="utf-8"), cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        set_key(cfg, k.strip(), v)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        set_key(cfg, "seed", env[SEED_ENV])
    return cfg.validate()


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def to_text(cfg: RunConfig) -> str:
    lines = []
    for name in ("seed", "out_dir", "workers"):
        lines.append(f"{name} = {_fmt(getattr(cfg, name))}")
    for section in SECTIONS:
        sub = getattr(cfg, section)
        for f in dataclasses.fields(sub):
            lines.append(f"{section}.{f.name} = {_fmt(getattr(sub, f.name))}")
    return "\n".join(lines) + "\n"


def tiny_config() -> RunConfig:
    """Smallest configuration exercising every component; used for gradient checks."""
    text = """
    data.context_length = 32
    data.horizon = 8
    data.patch_len = 8
    model.d_model = 16
    model.d_llm = 16
    model.vocab_size = 32
    model.n_prototypes = 8
    model.align_heads = 2
    model.layers = 1
    model.heads = 2
    model.ffn_width = 32
    model.max_positions = 4
    tscc.k_top = 3
    adapter.rank = 4
    adapter.hidden = 8
    """
    return parse_config(text).validate()


def desk_config() -> RunConfig:
    """Desk-scale setup for the sinusoid smoke task (L=96, tau=24)."""
    text = """
    data.context_length = 96
    data.horizon = 24
    data.patch_len = 24
    data.stride = 4
    model.d_model = 32
    model.d_llm = 32
    model.vocab_size = 256
    model.n_prototypes = 16
    model.align_heads = 4
    model.layers = 2
    model.heads = 4
    model.ffn_width = 64
    model.max_positions = 8
    train.max_epochs = 5
    train.patience = 2
    train.lr = 3e-3
    eval.horizons = 24, 48
    eval.seasonal_period = 24
    """
    return parse_config(text).validate()
