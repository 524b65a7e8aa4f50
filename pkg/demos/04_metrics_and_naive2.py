"""
M4-style scoring
================

Point metrics, the seasonally adjusted Naive2 baseline and the OWA ratio on a
handful of synthetic monthly series.
"""

import numpy as np

from sefc.evaluation import (
    SEASONAL_PERIODS,
    mase,
    naive2_forecast,
    score,
    seasonal_indices,
    seasonality_test,
    smape,
)

rng = np.random.Generator(np.random.Philox(4))
m = SEASONAL_PERIODS["monthly"]
horizon = 18
t = np.arange(96 + horizon)
series = [(100 + 0.8 * t + rng.normal(0, 3, t.size)) * (1 + 0.2 * np.sin(2 * np.pi * t / m + k))
          for k in range(5)]
ctx = np.stack([s[:-horizon] for s in series])
y = np.stack([s[-horizon:] for s in series])

# %%
# Seasonality is detected from the lag-12 autocorrelation.
print("seasonal:", [bool(seasonality_test(c, m)) for c in ctx])
print("indices of series 0:", np.round(seasonal_indices(ctx[0], m), 3))

# %%
# Naive2 against a plain drift forecast.
n2 = np.stack([naive2_forecast(c, m, horizon) for c in ctx])
drift = ctx[:, -1:] + (ctx[:, -1:] - ctx[:, :1]) / (ctx.shape[1] - 1) * np.arange(1, horizon + 1)
print("naive2 smape %.3f, drift smape %.3f" % (smape(y, n2), smape(y, drift)))
print("drift mase on series 0: %.3f" % mase(y[0], drift[0], ctx[0], m))

# %%
# OWA is relative to Naive2: 1 ties it, larger is worse. Drift ignores the season here.
rep = score(y, drift, ctx, m, horizon, "synthetic-monthly", naive2=n2)
print(rep.header())
print(rep.to_row())
print("naive2 against itself: owa =", score(y, n2, ctx, m, naive2=n2).owa)
