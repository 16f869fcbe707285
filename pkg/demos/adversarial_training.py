"""
Watching the critic gap close
=============================

Train the feature generator against a gradient-penalty critic on a small
synthetic corpus and watch the Wasserstein gap estimate shrink as the
synthesized features become hard to tell from real ones.
"""

import numpy as np

from mlzgen import gan
from mlzgen.data import SyntheticConfig, generate_synthetic

corpus = generate_synthetic(SyntheticConfig(
    seen_count=8, unseen_count=3, embed_dim=8, feature_dim=12,
    train_count=400, test_count=90, max_labels=2, seed=0))

config = gan.TrainConfig(mode="ALF", gen_hidden=32, critic_hidden=32,
                         encoder_hidden=32, epochs=25, batch_size=32,
                         critic_steps=5, pretrain_epochs=10, seed=0)

# the critic maximizes E[D(real)] - E[D(synth)] minus the penalty, the
# generator minimizes it plus a frozen seen-classifier regularizer
result = gan.train("CLSWGAN", corpus, config)
print("epoch   critic gap   generator loss")
for row in result.trace:
    if row.epoch % 4 == 0 or row.epoch == len(result.trace) - 1:
        print(f"{row.epoch:5d}   {row.wasserstein_gap:10.4f}   {row.generator_loss:14.4f}")

gaps = np.abs([row.wasserstein_gap for row in result.trace])
q = len(gaps) // 4
print(f"mean |gap|: first quarter {gaps[:q].mean():.4f} "
      f"-> last quarter {gaps[-q:].mean():.4f}")

# the VAE-GAN objective adds an encoder, a KL term, and a reconstruction
# term on top of the same adversarial game
result = gan.train("VAEGAN", corpus, config)
last = result.trace[-1]
print(f"VAEGAN final epoch: kl {last.kl:.4f}, reconstruction {last.reconstruction:.4f}")

# trained generators synthesize features for classes never seen in training
synthesized = gan.synthesize_unseen(result.models.generator, corpus.class_space,
                                    corpus.embeddings, count_per_class=4,
                                    max_labels=2, seed=1)
print("synthesized", len(synthesized), "instances for unseen classes,")
print("first instance labels:", synthesized[0].labels,
      "feature head:", np.round(synthesized[0].feature[:4], 3))
