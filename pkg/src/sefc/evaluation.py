"""Point-forecast metrics, the persistence and Naive2 baselines, and horizon-wise evaluation."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

SEASONAL_PERIODS = {"yearly": 1, "quarterly": 4, "monthly": 12, "weekly": 1, "daily": 1, "hourly": 24}


class MetricError(ValueError):
    pass


def _pair(y, yhat):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    yhat = np.asarray(yhat, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise MetricError("empty input")
    if y.shape != yhat.shape:
        raise MetricError(f"length mismatch: {y.size} targets, {yhat.size} forecasts")
    return y, yhat


def mse(y, yhat):
    y, yhat = _pair(y, yhat)
    return float(np.mean((y - yhat) ** 2))


def mae(y, yhat):
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def mape(y, yhat):
    y, yhat = _pair(y, yhat)
    zero = np.flatnonzero(y == 0)
    if zero.size:
        raise MetricError(f"mape: zero target at point index {int(zero[0])}")
    return float(100.0 * np.mean(np.abs(y - yhat) / np.abs(y)))


def smape(y, yhat):
    y, yhat = _pair(y, yhat)
    denom = np.abs(y) + np.abs(yhat)
    zero = np.flatnonzero(denom == 0)
    if zero.size:
        raise MetricError(f"smape: |y| + |yhat| is zero at point index {int(zero[0])}")
    return float(200.0 * np.mean(np.abs(y - yhat) / denom))


def mase_scale(insample, m=1):
    """Mean absolute m-step seasonal difference of the in-sample series."""
    insample = np.asarray(insample, dtype=np.float64).reshape(-1)
    if m < 1 or insample.size <= m:
        raise MetricError(f"mase: need in-sample length > m, got {insample.size} <= {m}")
    scale = float(np.mean(np.abs(insample[m:] - insample[:-m])))
    if scale == 0:
        raise MetricError("mase: seasonal differences of the in-sample series are all zero")
    return scale


def mase(y, yhat, insample, m=1):
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat))) / mase_scale(insample, m)


def owa(smape_value, mase_value, smape_naive2, mase_naive2):
    if smape_naive2 <= 0 or mase_naive2 <= 0:
        raise MetricError(f"owa: baselines must be positive, got smape {smape_naive2}, mase {mase_naive2}")
    return 0.5 * (smape_value / smape_naive2 + mase_value / mase_naive2)


def persistence_forecast(insample, horizon):
    """Repeat the last observed value; works row-wise on [B, L] inputs."""
    insample = np.asarray(insample, dtype=np.float64)
    return np.repeat(insample[..., -1:], horizon, axis=-1)


def acf(x, lag):
    x = np.asarray(x, dtype=np.float64)
    d = x - x.mean()
    denom = float(np.dot(d, d))
    if denom == 0:
        return 0.0
    return float(np.dot(d[lag:], d[:-lag])) / denom


def seasonality_test(x, m):
    """90% two-sided test of the lag-m autocorrelation against Bartlett's bound."""
    x = np.asarray(x, dtype=np.float64)
    if m <= 1 or x.size < 3 * m:
        return False
    s = sum(acf(x, k) ** 2 for k in range(1, m))
    limit = 1.645 * math.sqrt((1 + 2 * s) / x.size)
    return abs(acf(x, m)) > limit


def seasonal_indices(x, m):
    """Classical multiplicative decomposition: ratio to a centered moving average,
    averaged by phase (phase 0 = first observation) and normalized to mean 1."""
    x = np.asarray(x, dtype=np.float64)
    if m % 2:
        trend = np.convolve(x, np.full(m, 1.0 / m), mode="valid")
        offset = m // 2
    else:
        w = np.full(m + 1, 1.0 / m)
        w[0] = w[-1] = 0.5 / m
        trend = np.convolve(x, w, mode="valid")
        offset = m // 2
    ratio = x[offset:offset + trend.size] / trend
    phase = (np.arange(trend.size) + offset) % m
    idx = np.array([ratio[phase == k].mean() for k in range(m)])
    return idx / idx.mean()


def naive2_forecast(insample, m, horizon):
    """Seasonally adjusted naive forecast.

    When m > 1, the series is strictly positive and the seasonality test passes, the
    last deseasonalized value is repeated and reseasonalized; otherwise the last value
    is repeated.
    """
    x = np.asarray(insample, dtype=np.float64).reshape(-1)
    if x.size < max(m, 2):
        raise MetricError(f"naive2: need at least {max(m, 2)} in-sample points, got {x.size}")
    if m > 1 and np.all(x > 0) and seasonality_test(x, m):
        idx = seasonal_indices(x, m)
        n = x.size
        level = x[-1] / idx[(n - 1) % m]
        return level * idx[(n + np.arange(horizon)) % m]
    return np.full(horizon, x[-1])


@dataclass
class MetricReport:
    mse: float
    mae: float
    mape: float | None
    smape: float | None
    mase: float | None
    owa: float | None
    horizon: int
    dataset: str = ""
    seasonal_period: int = 1
    n_windows: int = 0
    notes: list = field(default_factory=list)

    FIELDS = ("dataset", "horizon", "seasonal_period", "n_windows", "mse", "mae", "mape", "smape", "mase", "owa")

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_row(self, delimiter=","):
        buf = io.StringIO()
        csv.writer(buf, delimiter=delimiter, lineterminator="").writerow(
            ["" if getattr(self, k) is None else getattr(self, k) for k in self.FIELDS])
        return buf.getvalue()

    @classmethod
    def header(cls, delimiter=","):
        return delimiter.join(cls.FIELDS)


def _guarded(fn, notes, *args):
    try:
        return fn(*args)
    except MetricError as exc:
        notes.append(str(exc))
        return None


def score(y, yhat, insample, m=1, horizon=None, dataset="", naive2=None):
    """Metrics for forecasts ``yhat`` [W, T] against ``y`` [W, T] with contexts ``insample`` [W, L].

    MSE, MAE, MAPE and SMAPE pool every point; MASE averages per-window scaled errors.
    OWA compares against Naive2 on the same windows (computed here when not given).
    Metrics whose denominators vanish are reported as None with a note.
    """
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    yhat = np.atleast_2d(np.asarray(yhat, dtype=np.float64))
    insample = np.atleast_2d(np.asarray(insample, dtype=np.float64))
    if y.shape != yhat.shape or len(insample) != len(y):
        raise MetricError(f"score: shapes y {y.shape}, yhat {yhat.shape}, insample {insample.shape}")
    notes = []
    if naive2 is None:
        naive2 = np.stack([naive2_forecast(row, m, y.shape[1]) for row in insample])

    def mean_mase(pred):
        vals = [mase(y[i], pred[i], insample[i], m) for i in range(len(y))]
        return float(np.mean(vals))

    model_smape = _guarded(smape, notes, y, yhat)
    model_mase = _guarded(mean_mase, notes, yhat)
    n2_smape = _guarded(smape, notes, y, naive2)
    n2_mase = _guarded(mean_mase, notes, naive2)
    ratio = None
    if None not in (model_smape, model_mase, n2_smape, n2_mase):
        ratio = _guarded(owa, notes, model_smape, model_mase, n2_smape, n2_mase)
    return MetricReport(
        mse=mse(y, yhat), mae=mae(y, yhat), mape=_guarded(mape, notes, y, yhat),
        smape=model_smape, mase=model_mase, owa=ratio,
        horizon=int(horizon if horizon is not None else y.shape[1]), dataset=dataset,
        seasonal_period=m, n_windows=len(y), notes=notes,
    )


@dataclass
class HorizonResult:
    report: MetricReport
    context: np.ndarray   # [W, L]
    target: np.ndarray    # [W, T]
    forecast: np.ndarray  # [W, T]
    naive2: np.ndarray    # [W, T]
    channels: np.ndarray
    starts: np.ndarray

    def forecast_rows(self, m=1):
        """Per-point rows carrying everything needed to recompute the report offline."""
        T = self.report.horizon
        for w in range(len(self.target)):
            try:
                scale = mase_scale(self.context[w], m)
            except MetricError:
                scale = float("nan")
            for step in range(T):
                yield (T, w, int(self.channels[w]), int(self.starts[w]), step,
                       repr(float(self.target[w, step])), repr(float(self.forecast[w, step])),
                       repr(float(self.naive2[w, step])), repr(scale))


FORECAST_COLUMNS = ("horizon", "window", "channel", "start", "step", "y_true", "y_pred", "y_naive2", "mase_scale")


def evaluate_horizon(model, frame, horizon, m=1, stride=0, max_windows=0, dataset="", eps=1e-5):
    """Roll ``model`` out to ``horizon`` over windows of ``frame`` and score the forecasts."""
    from .data import WindowSpec, make_windows
    from .forecast import autoregressive_forecast

    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    spec = WindowSpec(model.context_length, horizon, stride or horizon)
    windows = list(make_windows(frame, spec, channel_independent=True, eps=eps))
    if max_windows:
        windows = windows[:max_windows]
    ctx = np.stack([w.context for w in windows])
    tgt = np.stack([w.target for w in windows])
    pred = autoregressive_forecast(model, ctx, horizon, eps=eps)
    n2 = np.stack([naive2_forecast(row, m, horizon) for row in ctx])
    report = score(tgt, pred, ctx, m, horizon, dataset, naive2=n2)
    return HorizonResult(report, ctx, tgt, pred, n2,
                         np.array([w.channel for w in windows]), np.array([w.start for w in windows]))


def rescore_rows(rows, m=1):
    """Recompute a horizon's metrics from forecast rows (as produced by ``forecast_rows``)."""
    rows = list(rows)
    n_win = max(int(r[1]) for r in rows) + 1
    T = int(rows[0][0])
    y = np.zeros((n_win, T))
    yhat = np.zeros((n_win, T))
    n2 = np.zeros((n_win, T))
    scale = np.zeros(n_win)
    for r in rows:
        w, s = int(r[1]), int(r[4])
        y[w, s], yhat[w, s], n2[w, s], scale[w] = float(r[5]), float(r[6]), float(r[7]), float(r[8])
    out = {"mse": mse(y, yhat), "mae": mae(y, yhat), "smape": smape(y, yhat)}
    out["mase"] = float(np.mean(np.mean(np.abs(y - yhat), axis=1) / scale))
    n2_mase = float(np.mean(np.mean(np.abs(y - n2), axis=1) / scale))
    out["owa"] = owa(out["smape"], out["mase"], smape(y, n2), n2_mase)
    return out
