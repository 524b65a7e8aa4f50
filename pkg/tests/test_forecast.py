import math

import numpy as np
import pytest

from sefc.config import tiny_config
from sefc.data import instance_normalize
from sefc.forecast import Decoder, UntrainedModelError, autoregressive_forecast, rollout_normalized
from sefc.model import SeLLM
from sefc.numerics import ShapeError, Tensor, gradient_check, make_rng, sum_


class Counting:
    """Wraps a model and counts native forward calls."""

    def __init__(self, model):
        self.model, self.calls = model, 0
        self.horizon, self.trained, self.dtype = model.horizon, True, model.dtype

    def __call__(self, ctx, **kw):
        self.calls += 1
        return self.model(ctx, **kw)


class Ramp:
    """Cheap stand-in: predicts tau values from the last context value."""

    trained = True
    dtype = np.dtype(np.float64)

    def __init__(self, tau):
        self.horizon = tau

    def __call__(self, ctx, deterministic=True):
        return Tensor(ctx[:, -1:] + 0.1 * np.arange(1, self.horizon + 1))


@pytest.fixture(scope="module")
def trained_tiny():
    model = SeLLM(tiny_config(), seed=2)
    model.trained = True
    return model


def test_decoder_flatten_shape_non_divisible():
    dec = Decoder(7, 16, 96, make_rng(0))
    assert dec.fc1.weight.shape == (7 * 16, 32)
    assert dec(make_rng(1).normal(size=(2, 7, 16))).shape == (2, 96)


def test_decoder_segment_mode():
    dec = Decoder(4, 16, 8, make_rng(0), mode="segment")
    Y = make_rng(1).normal(size=(2, 4, 16))
    out = dec(Y).data
    assert out.shape == (2, 8)
    Y2 = Y.copy()
    Y2[:, 2] += 1.0
    changed = np.flatnonzero(np.any(dec(Y2).data != out, axis=0))
    assert changed.tolist() == [4, 5]
    with pytest.raises(ValueError):
        Decoder(3, 16, 8, make_rng(0), mode="segment")


def test_decoder_zero_weights_and_errors():
    dec = Decoder(4, 16, 8, make_rng(0))
    for p in (dec.fc2.weight, dec.fc2.bias):
        p.data[:] = 0
    assert not dec(make_rng(1).normal(size=(2, 4, 16))).data.any()
    with pytest.raises(ShapeError):
        dec(np.zeros((2, 4, 15)))
    with pytest.raises(ValueError):
        Decoder(4, 16, 8, make_rng(0), mode="conv")


@pytest.mark.parametrize("mode", ["flatten", "segment"])
def test_decoder_gradient_check(mode):
    dec = Decoder(4, 16, 8, make_rng(0), mode=mode)
    Y = make_rng(1).normal(size=(2, 4, 16))
    probe = make_rng(2).normal(size=(2, 8))
    rep = gradient_check(lambda: sum_(dec(Y) * probe), dict(dec.named_parameters()), step=1e-5)
    assert rep.passed, (rep.max_rel_err, rep.worst)


def test_single_native_step(trained_tiny):
    X = make_rng(0).normal(size=(3, 32)) * 4 + 10
    wrapped = Counting(trained_tiny)
    out = autoregressive_forecast(wrapped, X, 8)
    assert wrapped.calls == 1
    Xn, stats = instance_normalize(X)
    np.testing.assert_array_equal(out, trained_tiny(Xn).data * stats.std + stats.mean)


def _manual(model, Xn, steps):
    ctx, outs = Xn, []
    for _ in range(steps):
        y = model(ctx).data
        outs.append(y)
        ctx = np.concatenate([ctx[:, y.shape[1]:], y], axis=1)
    return np.concatenate(outs, axis=1)


def test_three_step_composition(trained_tiny):
    Xn, _ = instance_normalize(make_rng(1).normal(size=(2, 32)))
    assert np.array_equal(rollout_normalized(trained_tiny, Xn, 24), _manual(trained_tiny, Xn, 3))


def test_remainder_truncates(trained_tiny):
    Xn, _ = instance_normalize(make_rng(2).normal(size=(2, 32)))
    wrapped = Counting(trained_tiny)
    out = rollout_normalized(wrapped, Xn, 2 * 8 + 5)
    assert out.shape == (2, 21) and wrapped.calls == 3
    assert np.array_equal(out, _manual(trained_tiny, Xn, 3)[:, :21])


def test_determinism_and_prefix(trained_tiny):
    X = make_rng(3).normal(size=(2, 32))
    a = autoregressive_forecast(trained_tiny, X, 20)
    assert np.array_equal(a, autoregressive_forecast(trained_tiny, X, 20))
    b = autoregressive_forecast(trained_tiny, X, 37)
    assert np.array_equal(a[:, :16], b[:, :16])


def test_output_length_randomized():
    rng = make_rng(4)
    for _ in range(500):
        tau = int(rng.integers(1, 40))
        T = int(rng.integers(1, 300))
        model = Counting(Ramp(tau))
        out = rollout_normalized(model, rng.normal(size=(1, 16)), T)
        assert out.shape == (1, T)
        assert model.calls == math.ceil(T / tau)


def test_rollout_errors():
    model = SeLLM(tiny_config())
    with pytest.raises(UntrainedModelError):
        autoregressive_forecast(model, np.zeros((1, 32)), 8)
    model.trained = True
    with pytest.raises(ValueError):
        autoregressive_forecast(model, np.zeros((1, 32)), 0)
