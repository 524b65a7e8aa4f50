"""Series ingestion, chronological splits, windowing, instance normalization and segmentation."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import EPS


class DataError(ValueError):
    pass


@dataclass
class SeriesFrame:
    values: np.ndarray  # [time, channels]
    channel_names: list[str]
    timestamps: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if len(self.channel_names) != self.values.shape[1]:
            raise DataError(f"{len(self.channel_names)} channel names for {self.values.shape[1]} columns")

    def __len__(self):
        return self.values.shape[0]

    @property
    def n_channels(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class WindowSpec:
    context_length: int
    horizon: int
    stride: int = 1
    patch_len: int | None = None

    def __post_init__(self):
        if self.context_length <= 0 or self.horizon <= 0 or self.stride <= 0:
            raise DataError(f"window extents must be positive: {self}")
        if self.patch_len is not None and self.context_length % self.patch_len:
            raise DataError(f"context length {self.context_length} not divisible by segment length {self.patch_len}")


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray  # already eps-regularized, strictly positive


@dataclass
class Window:
    channel: int
    start: int
    context: np.ndarray
    target: np.ndarray
    stats: NormStats = field(repr=False)


def _parse_float(cell):
    try:
        return float(cell)
    except ValueError:
        return None


def load_series(path) -> SeriesFrame:
    """Read a delimiter-separated file with a header row.

    The delimiter is sniffed among comma, semicolon and tab. A first column whose
    first data cell is not numeric is treated as a timestamp column.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    text = path.read_text(encoding="utf-8")
    try:
        dialect = csv.Sniffer().sniff(text[:4096], delimiters=",;\t")
        delimiter = dialect.delimiter
    except csv.Error:
        delimiter = ","
    rows = [r for r in csv.reader(text.splitlines(), delimiter=delimiter) if r]
    if len(rows) < 3:
        raise DataError(f"{path}: need a header and at least 2 data rows")
    header, body = rows[0], rows[1:]
    has_time = _parse_float(body[0][0]) is None
    first = 1 if has_time else 0
    names = [h.strip() for h in header[first:]]
    values = np.empty((len(body), len(names)))
    for r, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r + 1} has {len(row)} cells, header has {len(header)}")
        for c, cell in enumerate(row[first:]):
            v = _parse_float(cell)
            if v is None or not np.isfinite(v):
                raise DataError(f"{path}: non-numeric cell {cell!r} at row {r + 1}, column {c + first} ({names[c]})")
            values[r, c] = v
    stamps = [row[0] for row in body] if has_time else None
    return SeriesFrame(values, names, stamps)


def write_series(path, frame: SeriesFrame, delimiter=","):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow((["date"] if frame.timestamps else []) + frame.channel_names)
        for t, row in enumerate(frame.values):
            w.writerow(([frame.timestamps[t]] if frame.timestamps else []) + [repr(float(v)) for v in row])


def split_series(frame: SeriesFrame, counts) -> tuple[SeriesFrame, SeriesFrame, SeriesFrame]:
    """Contiguous chronological train/val/test split by step counts."""
    counts = [int(c) for c in counts]
    if len(counts) != 3 or min(counts) < 0:
        raise DataError(f"split counts must be three non-negative integers, got {counts}")
    if sum(counts) > len(frame):
        raise DataError(f"split counts {counts} exceed series extent {len(frame)}")
    bounds = np.cumsum([0] + counts)
    parts = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        stamps = frame.timestamps[lo:hi] if frame.timestamps else None
        parts.append(SeriesFrame(frame.values[lo:hi], list(frame.channel_names), stamps))
    return tuple(parts)


def split_by_fraction(frame: SeriesFrame, fractions=(0.7, 0.1, 0.2)):
    n = len(frame)
    train = int(round(n * fractions[0]))
    val = int(round(n * fractions[1]))
    return split_series(frame, (train, val, n - train - val))


def window_count(extent, context_length, horizon, stride):
    if extent < context_length + horizon:
        return 0
    return (extent - context_length - horizon) // stride + 1


def instance_normalize(window, eps=EPS):
    """Zero-mean / unit-scale along the last axis using only ``window``'s own statistics."""
    window = np.asarray(window, dtype=np.float64)
    mean = window.mean(axis=-1, keepdims=True)
    std = window.std(axis=-1, keepdims=True) + eps
    return (window - mean) / std, NormStats(mean, std)


def denormalize(pred, stats: NormStats):
    return np.asarray(pred) * stats.std + stats.mean


def make_windows(frame: SeriesFrame, spec: WindowSpec, channel_independent=True, eps=EPS):
    """Yield windows ordered by (channel, start). Stats come from the context alone.

    With ``channel_independent`` every channel yields its own univariate windows;
    otherwise one window spans all channels (context [channels, L]) and ``channel`` is -1.
    """
    n = window_count(len(frame), spec.context_length, spec.horizon, spec.stride)
    if n == 0:
        raise DataError(
            f"context {spec.context_length} + horizon {spec.horizon} exceeds split extent {len(frame)}"
        )
    L, tau = spec.context_length, spec.horizon
    starts = [i * spec.stride for i in range(n)]
    if channel_independent:
        for ch in range(frame.n_channels):
            series = frame.values[:, ch]
            for s in starts:
                ctx = series[s:s + L]
                _, stats = instance_normalize(ctx, eps)
                yield Window(ch, s, ctx.copy(), series[s + L:s + L + tau].copy(), stats)
    else:
        for s in starts:
            ctx = frame.values[s:s + L].T
            _, stats = instance_normalize(ctx, eps)
            yield Window(-1, s, ctx.copy(), frame.values[s + L:s + L + tau].T.copy(), stats)


def segment(window, patch_len):
    """[B, L] -> [B, N, P] non-overlapping segments with element (b, n, p) == window[b, n*P + p]."""
    window = np.asarray(window)
    if window.ndim == 1:
        window = window[None, :]
    B, L = window.shape
    if patch_len <= 0 or L % patch_len:
        raise DataError(f"context length {L} not divisible by segment length {patch_len}")
    return window.reshape(B, L // patch_len, patch_len)


def flatten_segments(segments):
    segments = np.asarray(segments)
    return segments.reshape(segments.shape[0], -1)


@dataclass
class Batch:
    context: np.ndarray  # normalized, [B, L]
    target: np.ndarray   # normalized with context stats, [B, tau]
    mean: np.ndarray
    std: np.ndarray

    def digest(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.context).tobytes())
        h.update(np.ascontiguousarray(self.target).tobytes())
        return h.hexdigest()


def stack_windows(windows):
    ctx = np.stack([w.context for w in windows])
    tgt = np.stack([w.target for w in windows])
    mean = np.stack([w.stats.mean for w in windows])
    std = np.stack([w.stats.std for w in windows])
    return Batch((ctx - mean) / std, (tgt - mean) / std, mean, std)


def iterate_batches(windows, batch_size, rng=None):
    """Deterministic batches; shuffled with ``rng`` when given."""
    order = np.arange(len(windows))
    if rng is not None:
        order = rng.permutation(len(windows))
    for lo in range(0, len(order), batch_size):
        yield stack_windows([windows[i] for i in order[lo:lo + batch_size]])


def synthetic_sinusoid(length, seed=0, period=24, noise=0.05, spike_rate=0.01, spike_scale=3.0):
    """sin(2 pi t / period) + noise * N(0, 1), with a ``spike_rate`` fraction of points
    shifted by +-``spike_scale``. Returns a single-channel SeriesFrame."""
    rng = np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))
    t = np.arange(length)
    y = np.sin(2 * np.pi * t / period) + noise * rng.standard_normal(length)
    n_spikes = int(round(spike_rate * length))
    where = rng.choice(length, size=n_spikes, replace=False)
    y[where] += spike_scale * rng.choice([-1.0, 1.0], size=n_spikes)
    return SeriesFrame(y[:, None], ["y"])
