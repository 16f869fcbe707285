"""
Three ways to condition on a multi-label set
============================================

A multi-label instance is described by several class embeddings at once.
ALF pools the embeddings before generating, FLF generates one latent
feature per class and pools after, and CLF runs ALF and FLF side by side
and lets a small attention block arbitrate between them.
"""

import numpy as np

from mlzgen import fusion
from mlzgen.data import EmbeddingTable
from mlzgen.nn import init_mlp

rng = np.random.default_rng(7)
table = EmbeddingTable.from_raw(rng.normal(size=(6, 5)))  # 6 classes, 5-d
label_set = (0, 2, 5)
rows = table.rows(label_set)

# ALF: average the class embeddings, then feed one condition to the net
pooled = fusion.alf_fuse(rows)
print("ALF pooled condition:", np.round(pooled, 3))

# FLF: one latent feature per class from the same noise, averaged after
net = init_mlp(3 + 5, 8, 4, "lrelu", "sigmoid", seed=1)
z = rng.normal(size=3)
per_class = fusion.flf_generate(net, z, rows)
print("FLF pooled feature:  ", np.round(per_class, 3))

# both are insensitive to the order the labels arrive in, bit for bit
perm = rng.permutation(len(label_set))
assert fusion.alf_fuse(rows[perm]).tobytes() == pooled.tobytes()
assert fusion.flf_generate(net, z, rows[perm]).tobytes() == per_class.tobytes()
print("label order changes nothing (bitwise)")

# CLF: attend across the two candidate features and mean-pool the result.
# Freshly initialized, the attention block is an exact pass-through, so the
# fused feature starts at the plain average of its two inputs.
d = 4
params = fusion.init_cross_fusion(d, heads=2, mix_hidden=8, seed=2)
attr_feature = rng.normal(size=d)
feat_feature = rng.normal(size=d)
fused = fusion.clf_fuse(params, attr_feature, feat_feature)
print("CLF at init == 0.5 * (ALF + FLF):",
      np.array_equal(fused.feature, 0.5 * (attr_feature + feat_feature)))

# after training, the attention weights shift the balance per dimension
params.output = rng.normal(size=(d, d)) * 0.3
params.mix.layer2.weight = rng.normal(size=(8, d)) * 0.3
fused = fusion.clf_fuse(params, attr_feature, feat_feature)
print("CLF fused feature:   ", np.round(fused.feature, 3))
print("attention rows sum to one:",
      np.allclose([r.sum(axis=1) for r in fused.relations], 1.0))

# the same strategies drive whole batches during training
gen = fusion.init_generator("CLF", feature_dim=4, embed_dim=5, noise_dim=3,
                            hidden=8, heads=2, mix_hidden=8, seed=3)
batch = fusion.synthesize_batch(gen, rng.normal(size=(2, 3)),
                                [(0, 2, 5), (1,)], table)
print("synthesized batch shape:", batch.shape)
