"""
What training is allowed to touch
=================================

The backbone and the vocabulary table are frozen. Adapters start at zero, so
the untrained model is exactly the adapter-free one, and an optimizer run
moves every other parameter while the frozen ones keep their hashes.
"""

import numpy as np

from sefc.config import TrainConfig, tiny_config
from sefc.data import WindowSpec, make_windows, split_by_fraction, synthetic_sinusoid
from sefc.model import SeLLM, partition_parameters
from sefc.numerics import make_rng, parameter_hashes
from sefc.training import fit

cfg = tiny_config()
model = SeLLM(cfg, seed=0)
trainable, frozen = partition_parameters(model)
print("trainable tensors %d (%d values)" % (len(trainable), sum(p.size for p in trainable.values())))
print("frozen tensors %d (%d values)" % (len(frozen), sum(p.size for p in frozen.values())))
print("frozen:", sorted(frozen)[:4], "...")

# %%
# Neutral start: same seed, adapters removed.
cfg_off = tiny_config()
cfg_off.model.use_adapter = False
x = make_rng(1).normal(size=(3, 32))
diff = np.max(np.abs(model(x).data - SeLLM(cfg_off, seed=0)(x).data))
print("max difference with and without adapters: %.1e" % diff)

# %%
# Train for 100 steps and compare hashes.
train, val, _ = split_by_fraction(synthetic_sinusoid(400, seed=0, period=8), (0.7, 0.3, 0.0))
spec = WindowSpec(32, 8, 4, 8)
tw, vw = list(make_windows(train, spec)), list(make_windows(val, spec))
before = parameter_hashes(model)
rep = fit(model, tw, vw, TrainConfig(batch_size=4, max_epochs=100, patience=100, max_steps=100), seed=0)
after = parameter_hashes(model)
print("steps:", rep.steps, "val loss %.4f -> %.4f" % (rep.initial_val_loss, rep.best_val_loss))
print("frozen unchanged:", all(before[k] == after[k] for k in frozen))
print("trainable changed:", sum(before[k] != after[k] for k in trainable), "of", len(trainable))
