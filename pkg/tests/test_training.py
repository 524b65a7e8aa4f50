import json
import threading
import time

import numpy as np
import pytest
from conftest import sinusoid_windows

from sefc.config import TrainConfig, tiny_config
from sefc.model import SeLLM, host_parameter_names
from sefc.numerics import NonFiniteError, Parameter, ShapeError, parameter_hashes
from sefc.training import (
    Adam,
    DivergenceError,
    FrozenWeightError,
    clip_gradients,
    evaluate_loss,
    fit,
    loss,
    prefetch,
)


@pytest.fixture(scope="module")
def windows():
    return sinusoid_windows(tiny_config())


def test_loss_examples():
    y = np.arange(6.0).reshape(2, 3)
    assert loss(y, y).item() == 0.0
    assert loss(y + 1.0, y).item() == 1.0
    z = np.zeros((2, 4))
    assert loss(y, y, z, z, kl_weight=0.7).item() == 0.0
    assert loss(y, y, np.ones((2, 4)), z, kl_weight=2.0).item() == pytest.approx(1.0)
    with pytest.raises(ShapeError):
        loss(y, y[:, :2])


def test_adam_first_step_is_lr_sign():
    p = Parameter(np.array([1.0, -2.0, 3.0]))
    p.grad = np.array([0.5, -4.0, 0.0])
    Adam({"p": p}, lr=0.1).step()
    np.testing.assert_allclose(p.data, [0.9, -1.9, 3.0], atol=1e-7)


def test_adam_skips_missing_grad():
    p = Parameter(np.ones(2))
    Adam({"p": p}).step()
    assert np.array_equal(p.data, np.ones(2))


def test_clip_gradients():
    a, b = Parameter(np.zeros(2)), Parameter(np.zeros(1))
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_gradients({"a": a, "b": b}, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(np.concatenate([a.grad, b.grad]), [0.6, 0.0, 0.8])
    a.grad = np.array([0.1, 0.0])
    b.grad = np.array([0.0])
    clip_gradients({"a": a, "b": b}, 1.0)
    assert a.grad[0] == 0.1
    a.grad = np.array([np.inf, 0.0])
    with pytest.raises(NonFiniteError):
        clip_gradients({"a": a}, 1.0)


def test_prefetch_order_and_bounded():
    produced = []

    def source():
        for i in range(50):
            produced.append(i)
            yield i

    it = prefetch(source(), depth=3)
    assert next(it) == 0
    time.sleep(0.05)
    assert len(produced) <= 1 + 3 + 1
    assert [0] + list(it) == list(range(50))
    assert list(prefetch(iter(range(5)), depth=0)) == list(range(5))


def test_prefetch_propagates_errors():
    def source():
        yield 1
        raise RuntimeError("boom")

    with pytest.raises(RuntimeError, match="boom"):
        list(prefetch(source(), depth=2))
    assert threading.active_count() < 50


def test_fit_deterministic_and_workers_agnostic(windows):
    cfg = TrainConfig(lr=3e-3, batch_size=16, max_epochs=2)
    reports = []
    for workers in (0, 2):
        model = SeLLM(tiny_config(), seed=1)
        reports.append(fit(model, *windows, cfg, seed=5, workers=workers))
    a, b = reports
    assert a.fingerprint() == b.fingerprint()
    assert a.to_dict() | {"wall_clock": 0} == b.to_dict() | {"wall_clock": 0}
    assert json.loads(a.to_json())["steps"] == a.steps


def test_fit_learns_and_reports(windows):
    model = SeLLM(tiny_config(), seed=1)
    rep = fit(model, *windows, TrainConfig(lr=3e-3, batch_size=16, max_epochs=4, patience=4), seed=0)
    assert model.trained
    assert rep.train_loss[-1] < rep.initial_train_loss
    assert rep.best_val_loss == min(rep.val_loss)
    assert rep.best_val_loss == pytest.approx(evaluate_loss(model, windows[1]), rel=1e-12)
    assert rep.n_frozen == sum(p.size for n, p in model.named_parameters() if not p.trainable)
    assert rep.n_trainable + rep.n_frozen == model.num_parameters()


def test_fit_max_steps_and_hash_audit(windows):
    model = SeLLM(tiny_config(), seed=1)
    before = parameter_hashes(model)
    rep = fit(model, *windows, TrainConfig(batch_size=4, max_epochs=50, patience=50, max_steps=30), seed=0)
    after = parameter_hashes(model)
    assert rep.steps == 30
    frozen = set(host_parameter_names(model))
    assert all(before[k] == after[k] for k in frozen)
    assert all(before[k] != after[k] for k in after if k not in frozen)


def test_divergence_restores_last_good(windows):
    model = SeLLM(tiny_config(), seed=1)
    start = model.state_dict()
    train, val = windows
    bad = list(train)
    bad[3] = type(bad[3])(**{**bad[3].__dict__, "target": np.full_like(bad[3].target, np.inf)})
    with pytest.raises(DivergenceError) as info:
        fit(model, bad, val, TrainConfig(batch_size=len(bad)), seed=0)
    assert info.value.step == 1
    state = model.state_dict()
    assert all(np.array_equal(state[k], start[k]) for k in start)


def test_frozen_write_is_caught(windows, monkeypatch):
    model = SeLLM(tiny_config(), seed=1)
    original = Adam.step

    def leaky(self):
        original(self)
        model.vocabulary.weight.data[0, 0] += 1.0

    monkeypatch.setattr(Adam, "step", leaky)
    with pytest.raises(FrozenWeightError, match="vocabulary"):
        fit(model, *windows, TrainConfig(max_epochs=1), seed=0)


def test_float32_training(windows):
    model = SeLLM(tiny_config(), seed=1)
    rep = fit(model, *windows, TrainConfig(max_epochs=1, precision="float32"), seed=0)
    assert model.dtype == np.float32 and np.isfinite(rep.val_loss[0])


def test_fit_rejects_empty(windows):
    with pytest.raises(ValueError):
        fit(SeLLM(tiny_config()), [], windows[1], TrainConfig())
