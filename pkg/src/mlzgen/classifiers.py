"""Linear multi-label classifiers trained with per-class logistic losses.

The ZSL classifier scores unseen classes only and is trained purely on
synthesized features; the GZSL classifier scores all classes and trains
on real seen plus synthesized unseen features.  Both share one fitter: a
single affine map with a per-class sigmoid, minimizing mean binary
cross-entropy via Adam on the graph engine.  The BCE is computed from
logits (softplus(l) - y*l), which equals the textbook expansion exactly
while staying finite for saturated predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffmath as dm
from .data import ClassSpace, feature_matrix, label_matrix
from .nn import AdamState, adam_step, glorot_uniform


@dataclass
class ClassifierConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    batch_size: int | None = None  # None trains full-batch
    seed: int = 0


@dataclass
class MultiLabelClassifier:
    weight: np.ndarray  # d x K
    bias: np.ndarray  # 1 x K
    class_indices: tuple[int, ...]  # column k scores global class class_indices[k]


def bce_logits_node(g: dm.Graph, logits: dm.Node, targets: dm.Node) -> dm.Node:
    """Mean over all entries of softplus(l) - y*l (stable logit-form BCE)."""
    r, c = logits.shape
    relu = g.leaky_relu(logits, 0.0)
    # softplus(l) = relu(l) + log(1 + exp(-|l|)); l - 2*relu(l) = -|l|
    soft = g.add(relu, g.log(g.add(g.ones(r, c), g.exp(g.sub(logits, g.scale(relu, 2.0))))))
    return g.mean(g.sub(soft, g.mul(targets, logits)))


def fit_linear(features: np.ndarray, targets: np.ndarray, cfg: ClassifierConfig) -> tuple[np.ndarray, np.ndarray]:
    """Train weight/bias of a per-class logistic model; deterministic by seed."""
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n, d = features.shape
    k = targets.shape[1]
    if targets.shape[0] != n:
        raise ValueError("features and targets disagree on the instance count")
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 23]))
    params = {"w": glorot_uniform(rng, d, k), "b": np.zeros((1, k))}
    state = AdamState(learning_rate=cfg.learning_rate)

    graphs: dict[int, tuple] = {}

    def graph_for(rows: int):
        if rows not in graphs:
            g = dm.Graph()
            x = g.leaf("x", (rows, d))
            y = g.leaf("y", (rows, k))
            w = g.leaf("w", (d, k))
            b = g.leaf("b", (1, k))
            logits = g.add(g.matmul(x, w), g.broadcast_rows(b, rows))
            loss = bce_logits_node(g, logits, y)
            g.set_output(loss)
            graphs[rows] = g
        return graphs[rows]

    batch = cfg.batch_size
    for _ in range(cfg.epochs):
        if batch is None or batch >= n:
            slices = [np.arange(n)]
        else:
            order = rng.permutation(n)
            slices = [order[i:i + batch] for i in range(0, n, batch)]
        for idx in slices:
            g = graph_for(len(idx))
            dm.evaluate(g, {"x": features[idx], "y": targets[idx], **params})
            grads = dm.backward(g)
            params = adam_step(state, params, {"w": grads["w"], "b": grads["b"]})
    return params["w"], params["b"]


def train_zsl(synth_unseen, class_space: ClassSpace, cfg: ClassifierConfig) -> MultiLabelClassifier:
    """Classifier over unseen classes, trained on synthesized features only."""
    if not synth_unseen:
        raise ValueError("cannot train a ZSL classifier without synthesized instances")
    universe = tuple(class_space.unseen_indices)
    for inst in synth_unseen:
        for l in inst.labels:
            if class_space.is_seen(l):
                raise ValueError(f"ZSL training instance carries seen label {l}")
    x = feature_matrix(synth_unseen)
    y = label_matrix(synth_unseen, universe)
    w, b = fit_linear(x, y, cfg)
    return MultiLabelClassifier(w, b, universe)


def train_gzsl(synth_unseen, real_seen, class_space: ClassSpace, cfg: ClassifierConfig) -> MultiLabelClassifier:
    """Classifier over all classes: real seen plus synthesized unseen data."""
    if class_space.unseen_count > 0 and not synth_unseen:
        raise ValueError("GZSL training needs synthesized unseen instances")
    if not real_seen:
        raise ValueError("GZSL training needs real seen instances")
    for inst in synth_unseen:
        for l in inst.labels:
            if class_space.is_seen(l):
                raise ValueError(f"synthesized instance carries seen label {l}")
    for inst in real_seen:
        for l in inst.labels:
            if not class_space.is_seen(l):
                raise ValueError(f"real seen instance carries unseen label {l}")
    universe = tuple(range(class_space.total))
    pool = list(real_seen) + list(synth_unseen)
    x = feature_matrix(pool)
    y = label_matrix(pool, universe)
    w, b = fit_linear(x, y, cfg)
    return MultiLabelClassifier(w, b, universe)


def predict_scores(clf: MultiLabelClassifier, features) -> np.ndarray:
    """Per-class probabilities in (0,1) for a batch of feature rows."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    logits = features @ clf.weight + clf.bias
    out = np.empty_like(logits)
    pos = logits >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
    e = np.exp(logits[~pos])
    out[~pos] = e / (1.0 + e)
    return out
