"""
Forecasting a noisy sinusoid
============================

Train the desk-scale forecaster on a synthetic hourly-like signal, compare it
with last-value persistence, then roll it out past its native horizon.
"""

import numpy as np

from sefc.cli import _windows, split_frame, train_model
from sefc.config import desk_config
from sefc.data import stack_windows, synthetic_sinusoid
from sefc.evaluation import evaluate_horizon

# %%
# A period-24 sine with a little Gaussian noise and rare large spikes.
frame = synthetic_sinusoid(2000, seed=0)
print("series:", frame.values.shape, "min %.2f max %.2f" % (frame.values.min(), frame.values.max()))

# %%
# The desk config reads 96 steps (4 segments of 24) and predicts 24.
cfg = desk_config()
train, val, test = split_frame(frame, cfg.data.split)
model, report, scores = train_model(cfg, (train, val, test))
print("epochs:", len(report.train_loss), "steps:", report.steps)
print("val loss by epoch:", ["%.4f" % v for v in report.val_loss])
print("trainable %d / frozen %d parameters" % (report.n_trainable, report.n_frozen))

# %%
# Native-horizon error against persistence, both on normalized windows.
print("test mse %.4f  persistence %.4f  ratio %.3f"
      % (scores["mse"], scores["persistence_mse"], scores["mse"] / scores["persistence_mse"]))

# %%
# Longer horizons come from feeding predictions back in.
for h in (24, 48, 72):
    res = evaluate_horizon(model, test, h, m=24)
    print("horizon %3d: mse %.4f mae %.4f smape %s" % (h, res.report.mse, res.report.mae, res.report.smape))

# %%
# One window, side by side.
batch = stack_windows(_windows(test, cfg, "test")[:1])
pred = model(batch.context).data[0]
print("first 6 targets:", np.round(batch.target[0, :6], 3))
print("first 6 preds:  ", np.round(pred[:6], 3))
