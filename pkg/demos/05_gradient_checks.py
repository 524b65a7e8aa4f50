"""
Checking the gradients
======================

Every primitive's backward rule is compared with central differences, and a
deliberately broken rule is caught and named. Then the whole composed model is
checked on a small configuration.
"""

from sefc.config import parse_config, tiny_config
from sefc.model import model_gradient_check
from sefc.numerics import inject_backward_fault
from sefc.numerics.gradcheck import primitive_suite

suite = primitive_suite()
worst = max(suite.items(), key=lambda kv: kv[1].max_rel_err)
print("%d primitives checked, worst %s at %.2e" % (len(suite), worst[0], worst[1].max_rel_err))

# %%
# Scale the softmax backward rule by 1.5 and see which ops now fail.
with inject_backward_fault("softmax", 1.5):
    broken = primitive_suite()
print("failing with a corrupted softmax rule:", sorted(k for k, r in broken.items() if not r.passed))

# %%
# The composed model: encoder, alignment, TSCC, adapter-augmented backbone, decoder.
small = parse_config("model.d_model = 8\nmodel.d_llm = 8\nmodel.vocab_size = 16\nmodel.n_prototypes = 4\n"
                     "tscc.k_top = 2\nmodel.ffn_width = 16\nadapter.rank = 2\nadapter.hidden = 4\n",
                     tiny_config()).validate()
res = model_gradient_check(small)
print("coordinates %d, max relative error %.2e (%s), %.1fs"
      % (res.n_coordinates, res.report.max_rel_err, res.report.worst, res.seconds))
