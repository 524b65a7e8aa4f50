"""Optimization loop: native-horizon MSE, Adam over trainable parameters, early stopping."""

from __future__ import annotations

import hashlib
import json
import queue
import threading
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import TrainConfig
from .data import Batch, iterate_batches
from .numerics import NonFiniteError, ShapeError, as_tensor, mean, no_grad, parameter_hashes, square
from .tscc import kl_standard_normal


class DivergenceError(RuntimeError):
    """Non-finite loss or gradient. ``state`` holds the last good parameters, already restored."""

    def __init__(self, message, state=None, step=None):
        super().__init__(message)
        self.state = state
        self.step = step


class FrozenWeightError(RuntimeError):
    pass


def mse_loss(pred, target):
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"loss: prediction {pred.shape} vs target {target.shape}")
    return mean(square(pred - target))


def loss(pred, target, mu=None, logvar=None, kl_weight=0.0):
    """MSE over all elements plus ``kl_weight`` times the latent KL to N(0, I)."""
    out = mse_loss(pred, target)
    if kl_weight and mu is not None:
        out = out + kl_standard_normal(mu, logvar) * kl_weight
    return out


class Adam:
    def __init__(self, params: dict, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def clip_gradients(params: dict, max_norm: float) -> float:
    """Scale all gradients by a common factor so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64)))
                              for p in params.values() if p.grad is not None)))
    if not np.isfinite(total):
        raise NonFiniteError(f"gradient norm is {total}")
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return total


def prefetch(iterable, depth=2):
    """Produce items on a background thread through a bounded queue; order is preserved."""
    if depth < 1:
        yield from iterable
        return
    q = queue.Queue(maxsize=depth)
    done = object()
    stop = threading.Event()

    def work():
        try:
            for item in iterable:
                while not stop.is_set():
                    try:
                        q.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
            q.put(done)
        except BaseException as exc:  # surfaced on the consumer side
            q.put(exc)

    t = threading.Thread(target=work, daemon=True)
    t.start()
    try:
        while True:
            item = q.get()
            if item is done:
                return
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    initial_train_loss: float = float("nan")
    initial_val_loss: float = float("nan")
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    steps: int = 0
    stopped_early: bool = False
    n_trainable: int = 0
    n_frozen: int = 0
    batch_digest: str = ""
    parameter_digest: str = ""
    wall_clock: float = 0.0

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def fingerprint(self):
        """Hash of everything except wall-clock time."""
        d = self.to_dict()
        d.pop("wall_clock")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def _cast(batch: Batch, dtype):
    return batch.context.astype(dtype), batch.target.astype(dtype)


def evaluate_loss(model, windows, batch_size=256):
    """Mean native-horizon MSE over ``windows`` in deterministic mode."""
    total, count = 0.0, 0
    with no_grad():
        for batch in iterate_batches(windows, batch_size):
            ctx, tgt = _cast(batch, model.dtype)
            pred = model(ctx, deterministic=True).data
            total += float(np.sum(np.square(pred.astype(np.float64) - tgt)))
            count += tgt.size
    return total / count


def _state_digest(params: dict):
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data).tobytes())
    return h.hexdigest()


def fit(model, train_windows, val_windows, cfg: TrainConfig, seed=0, workers=0, log=None) -> TrainReport:
    """Train ``model`` in place and leave it holding the best-validation parameters.

    Batches are shuffled from a Philox stream derived from ``seed`` only, so runs that
    share (seed, windows, batch size) see identical batches. The latent path samples
    during training; validation and selection use the deterministic path.
    """
    from .model import child_rng, partition_parameters

    if not train_windows or not val_windows:
        raise ValueError("fit needs non-empty training and validation windows")
    log = log or (lambda msg: None)
    if cfg.precision == "float32":
        model.astype(np.float32)
    trainable, frozen = partition_parameters(model)
    frozen_hashes = {k: v for k, v in parameter_hashes(model).items() if k in frozen}
    opt = Adam(trainable, lr=cfg.lr)
    batch_rng = child_rng(seed, "batches")
    noise_rng = child_rng(seed, "latent-noise")
    digest = hashlib.sha256()

    report = TrainReport(n_trainable=sum(p.size for p in trainable.values()),
                         n_frozen=sum(p.size for p in frozen.values()))
    start = time.perf_counter()
    report.initial_train_loss = evaluate_loss(model, train_windows)
    report.initial_val_loss = evaluate_loss(model, val_windows)
    best_state = model.state_dict()
    good_state = best_state
    bad_epochs = 0
    done = False

    for epoch in range(cfg.max_epochs):
        running, seen = 0.0, 0
        batches = iterate_batches(train_windows, cfg.batch_size, rng=batch_rng)
        for batch in prefetch(batches, depth=2 * workers):
            digest.update(batch.digest().encode())
            ctx, tgt = _cast(batch, model.dtype)
            model.zero_grad()
            try:
                out = model.forward(ctx, rng=noise_rng, deterministic=False)
                dec = out.tscc.decomposition if out.tscc is not None else None
                value = loss(out.prediction, tgt, dec and dec.mu, dec and dec.logvar, cfg.kl_weight)
                if not np.isfinite(value.item()):
                    raise NonFiniteError(f"loss is {value.item()}")
                value.backward()
                clip_gradients(trainable, cfg.clip_norm)
            except NonFiniteError as exc:
                model.load_state_dict(good_state)
                report.wall_clock = time.perf_counter() - start
                raise DivergenceError(f"diverged at step {report.steps + 1}: {exc}", good_state,
                                      report.steps + 1) from exc
            opt.step()
            report.steps += 1
            running += value.item() * len(tgt)
            seen += len(tgt)
            if cfg.max_steps and report.steps >= cfg.max_steps:
                done = True
                break
        model.zero_grad()
        now = parameter_hashes(model)
        moved = sorted(k for k, h in frozen_hashes.items() if now[k] != h)
        if moved:
            raise FrozenWeightError(f"frozen parameters changed: {moved}")
        report.train_loss.append(running / max(seen, 1))
        val = evaluate_loss(model, val_windows)
        report.val_loss.append(val)
        if not np.isfinite(val):
            model.load_state_dict(good_state)
            raise DivergenceError(f"validation loss is {val} after epoch {epoch}", good_state, report.steps)
        good_state = model.state_dict()
        log(f"epoch {epoch}: train {report.train_loss[-1]:.5f} val {val:.5f}")
        if val < report.best_val_loss:
            report.best_val_loss, report.best_epoch = val, epoch
            best_state = good_state
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                report.stopped_early = True
                break
        if done:
            break

    model.load_state_dict(best_state)
    model.trained = True
    report.batch_digest = digest.hexdigest()
    report.parameter_digest = _state_digest(trainable)
    report.wall_clock = time.perf_counter() - start
    return report
