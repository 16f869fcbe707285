"""
Corpora on disk
===============

Feature files (.mlzf binary or .csv text) carry one label set and one
feature vector per record; embedding files (.mlze) carry the class
embedding table. Everything round-trips through float32 on disk.
"""

import tempfile
from pathlib import Path

import numpy as np

from mlzgen import data

corpus = data.generate_synthetic(data.SyntheticConfig(
    seen_count=5, unseen_count=2, embed_dim=6, feature_dim=8,
    train_count=40, test_count=14, max_labels=2, seed=3))

inst = corpus.train_seen[0]
print("first instance labels:", inst.labels)
print("feature head:", np.round(inst.feature[:4], 3))

with tempfile.TemporaryDirectory() as scratch:
    root = Path(scratch)

    # binary feature records: magic, counts, then label ids + float32 values
    data.save_features(root / "train.mlzf", corpus.train_seen)
    print("train.mlzf bytes:", (root / "train.mlzf").stat().st_size)
    loaded = data.load_features(root / "train.mlzf")
    print("records loaded:", len(loaded))
    feature, labels = loaded[0]
    print("round trip keeps labels", labels, "and float32-exact features:",
          np.array_equal(feature, inst.feature.astype(np.float32).astype(np.float64)))

    # the CSV twin is human-readable: "labels,then,values"
    data.save_features(root / "train.csv", corpus.train_seen[:2])
    print("csv first line:", (root / "train.csv").read_text().splitlines()[0][:60], "...")

    # embeddings are unit-normalized on load, so downstream code can rely on it
    data.save_embeddings(root / "embeddings.mlze", corpus.embeddings)
    table = data.load_embeddings(root / "embeddings.mlze")
    print("embedding row norms:", np.round(np.linalg.norm(table.vectors, axis=1), 6))

    # load_dataset reassembles a corpus and min-max normalizes features
    # using the training split's ranges only
    data.save_features(root / "test_seen.mlzf", corpus.test_seen)
    data.save_features(root / "test_unseen.mlzf", corpus.test_unseen)
    rebuilt = data.load_dataset(
        corpus.class_space,
        embeddings_path=root / "embeddings.mlze",
        train_path=root / "train.mlzf",
        test_seen_path=root / "test_seen.mlzf",
        test_unseen_path=root / "test_unseen.mlzf",
    )
    train_features = data.feature_matrix(rebuilt.train_seen)
    print("normalized train range:",
          round(train_features.min(), 3), "to", round(train_features.max(), 3))
