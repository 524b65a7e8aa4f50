"""
Inside the TSCC block
=====================

Follow one batch through the correlation-and-gating stage: split the aligned
representation, score it against the prototypes, pick the best matches and
gate the result back together.
"""

import numpy as np

from sefc.config import tiny_config
from sefc.data import segment
from sefc.model import SeLLM
from sefc.numerics import make_rng

model = SeLLM(tiny_config(), seed=0)
x = make_rng(1).normal(size=(2, 32))
seg = segment(x, 8)
print("segments:", seg.shape)

out = model.tscc_forward(seg)

# %%
# The latent split is exact: the two halves add back to the aligned input.
dec = out.decomposition
J = dec.de_anomaly.data + dec.anomaly.data
H = model.encoder(seg)
J_ref = model.align(model.semantic(model.vocabulary), H).data
print("max |DA + DC - J| = %.2e" % np.max(np.abs(J - J_ref)))

# %%
# Correlation map between segment embeddings and enriched prototypes.
M = out.M.data
print("correlation map:", M.shape, "range [%.3f, %.3f]" % (M.min(), M.max()))
print("top-%d prototype indices for batch 0:" % out.indices.shape[-1])
print(out.indices[0])

# %%
# Both outputs land in the backbone width and are summed before it.
print("GA", out.GA.shape, "GC", out.GC.shape)
print("|GA| mean %.3f, |GC| mean %.3f" % (np.abs(out.GA.data).mean(), np.abs(out.GC.data).mean()))

# %%
# Sampling the latent path changes the outputs; the deterministic path does not.
again = model.tscc_forward(seg)
sampled = model.tscc_forward(seg, rng=make_rng(3), deterministic=False)
print("deterministic repeat identical:", np.array_equal(out.GA.data, again.GA.data))
print("sampled differs by %.3e" % np.max(np.abs(sampled.GA.data - out.GA.data)))
