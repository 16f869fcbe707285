"""Adversarial feature synthesis with a gradient-penalty critic.

Two objectives share one critic recipe.  The plain objective trains the
generator against the critic plus a frozen seen-class classifier
regularizer; the variational objective adds an encoder with a KL term
and a reconstruction term on encoder-sampled noise.  The critic
maximizes

    E[D(x_real, c)] - E[D(x_synth, c)] - lam * E[(||grad_xhat D(xhat, c)|| - 1)^2]

with xhat an instance-wise uniform interpolation of real and synthesized
features.  The penalty's gradient is built symbolically on the graph
(``Graph.grad``), so one numeric backward pass afterwards differentiates
the whole objective, penalty included, w.r.t. the critic weights.

Training alternates ``critic_steps`` critic updates (each on a fresh
shuffled batch) with one generator update on the last batch's instances
and fresh noise; an epoch is floor(N / batch) generator steps.  All
randomness flows from named substreams of the config seed, and a
non-finite loss aborts with :class:`TrainingDivergedError`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import diffmath as dm
from .classifiers import ClassifierConfig, bce_logits_node, fit_linear
from .data import ClassSpace, EmbeddingTable, MultiLabelInstance, feature_matrix, label_matrix
from .fusion import (
    GeneratorBundle,
    SynthesisGraph,
    SynthesisInputs,
    SynthesisNodes,
    assign_generator,
    build_synthesis,
    declare_synthesis_leaves,
    generator_param_dict,
    init_generator,
    make_synthesis_inputs,
)
from .nn import AdamState, MlpParams, adam_step, apply_mlp, assign_mlp, init_mlp, mlp_param_dict

OBJECTIVES = ("CLSWGAN", "VAEGAN")

BCE_CLAMP = 1e-7


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class SeenClassifierParams:
    """Frozen single-layer logistic classifier over the seen classes."""

    weight: np.ndarray  # d x S
    bias: np.ndarray  # 1 x S
    frozen: bool = True

    def param_dict(self) -> dict[str, np.ndarray]:
        return {"fcls.w": self.weight, "fcls.b": self.bias}


@dataclass
class ZslModels:
    generator: GeneratorBundle
    critic: MlpParams
    encoder: MlpParams | None
    seen_classifier: SeenClassifierParams


@dataclass
class TrainConfig:
    mode: str = "CLF"
    objective: str = "CLSWGAN"
    penalty_weight: float = 10.0
    classifier_weight: float = 0.1
    kl_weight: float = 1.0
    reconstruction_weight: float = 0.1
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 40
    critic_steps: int = 5
    noise_dim: int | None = None  # defaults to the embedding width
    heads: int = 8
    gen_hidden: int = 64
    critic_hidden: int = 64
    mix_hidden: int = 128
    encoder_hidden: int = 64
    pretrain_epochs: int = 30
    synth_per_class: int = 150
    synth_max_labels: int | None = None
    seed: int = 0


@dataclass
class EpochStats:
    epoch: int
    critic_loss: float
    generator_loss: float
    kl: float
    reconstruction: float
    classifier_term: float
    wasserstein_gap: float
    penalty: float


@dataclass
class TrainResult:
    models: ZslModels
    trace: list


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["epoch", "critic_loss", "generator_loss", "kl", "reconstruction", "classifier_term"]
        )
        for row in trace:
            writer.writerow(
                [row.epoch, row.critic_loss, row.generator_loss, row.kl, row.reconstruction, row.classifier_term]
            )


def init_critic(feature_dim: int, embed_dim: int, hidden: int, seed=0) -> MlpParams:
    return init_mlp(feature_dim + embed_dim, hidden, 1, "lrelu", "none", seed=seed)


def init_encoder(feature_dim: int, embed_dim: int, noise_dim: int, hidden: int, seed=0) -> MlpParams:
    # output rows are [posterior mean | posterior log-variance]
    return init_mlp(feature_dim + embed_dim, hidden, 2 * noise_dim, "lrelu", "none", seed=seed)


# ----------------------------------------------------------------------
# loss builders (shared between the public ops and the trainer)


def _critic_score(g: dm.Graph, critic: MlpParams, x: dm.Node, cond: dm.Node) -> dm.Node:
    return apply_mlp(g, "critic", critic, g.concat_cols(x, cond))


def _penalty_node(g: dm.Graph, critic: MlpParams, interp: dm.Node, cond: dm.Node) -> dm.Node:
    score_sum = g.sum(_critic_score(g, critic, interp, cond))
    grad = g.grad(score_sum, interp)  # rows stay independent: per-instance gradients
    norms = g.l2_norm(grad, axis=1)
    b = norms.shape[0]
    return g.mean(g.square(g.sub(norms, g.ones(b, 1))))


def _kl_node(g: dm.Graph, mu: dm.Node, logvar: dm.Node) -> dm.Node:
    """Mean over the batch of 0.5 * sum_dims(mu^2 + var - logvar - 1)."""
    b = mu.shape[0]
    inner = g.sub(g.sub(g.add(g.square(mu), g.exp(logvar)), logvar), g.ones(*mu.shape))
    return g.scale(g.sum(inner), 0.5 / b)


def _clamped_bce_node(g: dm.Graph, p: dm.Node, target: dm.Node, eps: float = BCE_CLAMP) -> dm.Node:
    """Per-dimension BCE summed over dims, mean over batch.

    Predictions are clamped into [eps, 1-eps] with rectifier identities so
    saturated or out-of-range values stay differentiable and finite.
    """
    b, d = p.shape
    c_lo = g.scale(g.ones(b, d), eps)
    c_hi = g.scale(g.ones(b, d), 1.0 - eps)
    clamped = g.add(g.sub(g.leaky_relu(g.sub(p, c_lo), 0.0), g.leaky_relu(g.sub(p, c_hi), 0.0)), c_lo)
    ones = g.ones(b, d)
    ll = g.add(
        g.mul(target, g.log(clamped)),
        g.mul(g.sub(ones, target), g.log(g.sub(ones, clamped))),
    )
    return g.scale(g.sum(ll), -1.0 / b)


def _coerce_batch(x, name: str) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.ndim != 2:
        raise ValueError(f"{name} must be a matrix of rows")
    return x


def _default_eps(rng, b: int, eps) -> np.ndarray:
    if eps is not None:
        eps = np.asarray(eps, dtype=np.float64).reshape(b, 1)
        if np.any(eps < 0.0) or np.any(eps > 1.0):
            raise ValueError("interpolation weights must lie in [0,1]")
        return eps
    if rng is None:
        rng = np.random.default_rng(0)
    return rng.uniform(size=(b, 1))


def gradient_penalty(critic: MlpParams, real_features, synth_features, conditions, *, eps=None, rng=None) -> float:
    """E[(||grad_xhat D(xhat, c)||_2 - 1)^2] on instance-wise interpolates."""
    real = _coerce_batch(real_features, "real_features")
    synth = _coerce_batch(synth_features, "synth_features")
    cond = _coerce_batch(conditions, "conditions")
    if real.shape != synth.shape or real.shape[0] != cond.shape[0]:
        raise ValueError("real/synthesized/condition batches must align")
    e = _default_eps(rng, real.shape[0], eps)
    interp = e * real + (1.0 - e) * synth
    g = dm.Graph()
    i_node = g.leaf("interp", interp.shape)
    c_node = g.const(cond)
    pen = _penalty_node(g, critic, i_node, c_node)
    value = dm.evaluate(g, {"interp": interp, **mlp_param_dict("critic", critic)}, pen)
    return float(value[0, 0])


def critic_loss(critic: MlpParams, real_features, synth_features, conditions, *, penalty_weight: float = 10.0, eps=None, rng=None) -> float:
    """The critic's maximized objective: score gap minus weighted penalty."""
    real = _coerce_batch(real_features, "real_features")
    synth = _coerce_batch(synth_features, "synth_features")
    cond = _coerce_batch(conditions, "conditions")
    if real.shape != synth.shape or real.shape[0] != cond.shape[0]:
        raise ValueError("real/synthesized/condition batches must align")
    e = _default_eps(rng, real.shape[0], eps)
    interp = e * real + (1.0 - e) * synth
    g = dm.Graph()
    r_node = g.leaf("x_real", real.shape)
    s_node = g.leaf("x_synth", synth.shape)
    i_node = g.leaf("interp", interp.shape)
    c_node = g.const(cond)
    gap = g.sub(
        g.mean(_critic_score(g, critic, r_node, c_node)),
        g.mean(_critic_score(g, critic, s_node, c_node)),
    )
    pen = _penalty_node(g, critic, i_node, c_node)
    obj = g.sub(gap, g.scale(pen, penalty_weight))
    value = dm.evaluate(
        g,
        {"x_real": real, "x_synth": synth, "interp": interp, **mlp_param_dict("critic", critic)},
        obj,
    )
    return float(value[0, 0])


def classifier_regularizer(classifier: SeenClassifierParams, synth_features, targets) -> float:
    """Mean per-class BCE of the frozen seen classifier on synthesized rows."""
    x = _coerce_batch(synth_features, "synth_features")
    y = _coerce_batch(targets, "targets")
    if y.shape != (x.shape[0], classifier.weight.shape[1]):
        raise ValueError("target matrix must be batch x seen-class-count")
    g = dm.Graph()
    xn = g.leaf("x", x.shape)
    yn = g.leaf("y", y.shape)
    w = g.leaf("fcls.w", classifier.weight.shape)
    b = g.leaf("fcls.b", classifier.bias.shape)
    logits = g.add(g.matmul(xn, w), g.broadcast_rows(b, x.shape[0]))
    loss = bce_logits_node(g, logits, yn)
    value = dm.evaluate(g, {"x": x, "y": y, **classifier.param_dict()}, loss)
    return float(value[0, 0])


def vae_losses(encoder: MlpParams, generator: GeneratorBundle, features, label_sets, table: EmbeddingTable, *, eta=None, rng=None) -> tuple[float, float]:
    """(KL, reconstruction) for a batch under the variational objective."""
    x = _coerce_batch(features, "features")
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("reconstruction targets must be normalized into [0,1]")
    inputs = make_synthesis_inputs(label_sets, table)
    if len(label_sets) != x.shape[0]:
        raise ValueError("one label set per feature row is required")
    noise_dim = encoder.out_dim // 2
    if eta is None:
        if rng is None:
            rng = np.random.default_rng(0)
        eta = rng.normal(size=(x.shape[0], noise_dim))
    eta = _coerce_batch(eta, "eta")
    g = dm.Graph()
    x_node = g.leaf("x_real", x.shape)
    eta_node = g.leaf("eta", eta.shape)
    pooled = g.const(inputs.pooled)
    enc_out = apply_mlp(g, "enc", encoder, g.concat_cols(x_node, pooled))
    mu = g.slice_cols(enc_out, 0, noise_dim)
    logvar = g.slice_cols(enc_out, noise_dim, 2 * noise_dim)
    kl = _kl_node(g, mu, logvar)
    z = g.add(mu, g.mul(g.exp(g.scale(logvar, 0.5)), eta_node))
    nodes = _const_synthesis_nodes(g, inputs, generator.mode, pooled)
    recon = build_synthesis(g, generator, z, nodes, "gen")
    rec = _clamped_bce_node(g, recon, x_node)
    bindings = {
        "x_real": x,
        "eta": eta,
        **mlp_param_dict("enc", encoder),
        **generator_param_dict("gen", generator),
    }
    dm.evaluate(g, bindings, rec)
    return float(g.value(kl)[0, 0]), float(g.value(rec)[0, 0])


def _const_synthesis_nodes(g: dm.Graph, inputs: SynthesisInputs, mode: str, pooled_node) -> SynthesisNodes:
    if mode == "ALF":
        return SynthesisNodes(pooled_node)
    return SynthesisNodes(
        pooled_node,
        g.const(inputs.pair_embeddings),
        g.const(inputs.expand),
        g.const(inputs.pool_weights),
    )


# ----------------------------------------------------------------------
# trainer


class _BatchMaker:
    """Precomputed per-instance tensors, assembled into batch bindings."""

    def __init__(self, instances, table: EmbeddingTable, seen_count: int, width: int):
        n = len(instances)
        d_e = table.dim
        self.x = feature_matrix(instances)
        self.y = label_matrix(instances, range(seen_count))
        self.width = width
        self.pooled = np.stack([table.rows(inst.labels).mean(axis=0) for inst in instances])
        self.pair_emb = np.zeros((n, width, d_e))
        self.weight_rows = np.zeros((n, width))
        for i, inst in enumerate(instances):
            labels = inst.labels  # already sorted
            self.pair_emb[i, : len(labels)] = table.rows(labels)
            self.weight_rows[i, : len(labels)] = 1.0 / len(labels)
        self._expand_cache: dict[int, np.ndarray] = {}

    def expand(self, b: int) -> np.ndarray:
        if b not in self._expand_cache:
            e = np.zeros((b * self.width, b))
            for i in range(b):
                e[i * self.width : (i + 1) * self.width, i] = 1.0
            self._expand_cache[b] = e
        return self._expand_cache[b]

    def bindings(self, idx: np.ndarray, mode: str) -> dict[str, np.ndarray]:
        b = len(idx)
        out = {"pooled": self.pooled[idx]}
        if mode != "ALF":
            out["pairs"] = self.pair_emb[idx].reshape(b * self.width, -1)
            out["expand"] = self.expand(b)
            w = np.zeros((b, b * self.width))
            for i in range(b):
                w[i, i * self.width : (i + 1) * self.width] = self.weight_rows[idx[i]]
            out["weights"] = w
        return out

    def synthesis_inputs(self, idx: np.ndarray) -> SynthesisInputs:
        bind = self.bindings(idx, "FLF")
        return SynthesisInputs(
            bind["pooled"], bind["pairs"], bind["expand"], bind["weights"], self.width
        )


def _index_stream(rng: np.random.Generator, n: int, batch: int):
    while True:
        order = rng.permutation(n)
        for i in range(0, n - batch + 1, batch):
            yield order[i : i + batch]


class _CriticGraph:
    def __init__(self, critic: MlpParams, b: int, d: int, d_e: int, lam: float):
        g = dm.Graph()
        x_real = g.leaf("x_real", (b, d))
        x_synth = g.leaf("x_synth", (b, d))
        interp = g.leaf("interp", (b, d))
        cond = g.leaf("pooled", (b, d_e))
        mean_real = g.mean(_critic_score(g, critic, x_real, cond))
        mean_synth = g.mean(_critic_score(g, critic, x_synth, cond))
        self.gap = g.sub(mean_real, mean_synth)
        self.penalty = _penalty_node(g, critic, interp, cond)
        self.objective = g.sub(self.gap, g.scale(self.penalty, lam))
        loss = g.scale(self.objective, -1.0)  # critic maximizes the objective
        g.set_output(loss)
        self.graph = g


class _GeneratorGraph:
    def __init__(self, objective, generator, critic, encoder, b, d, d_e, d_z, width, seen_count, alpha, kl_w, rec_w):
        g = dm.Graph()
        z = g.leaf("z", (b, d_z))
        nodes = declare_synthesis_leaves(g, b, width, d_e, generator.mode)
        y = g.leaf("y", (b, seen_count))
        synth = build_synthesis(g, generator, z, nodes, "gen")
        adv = g.scale(g.mean(_critic_score(g, critic, synth, nodes.pooled)), -1.0)
        w = g.leaf("fcls.w", (d, seen_count))
        bias = g.leaf("fcls.b", (1, seen_count))
        logits = g.add(g.matmul(synth, w), g.broadcast_rows(bias, b))
        self.cls_term = bce_logits_node(g, logits, y)
        total = g.add(adv, g.scale(self.cls_term, alpha))
        if objective == "VAEGAN":
            x_real = g.leaf("x_real", (b, d))
            eta = g.leaf("eta", (b, d_z))
            enc_out = apply_mlp(g, "enc", encoder, g.concat_cols(x_real, nodes.pooled))
            mu = g.slice_cols(enc_out, 0, d_z)
            logvar = g.slice_cols(enc_out, d_z, 2 * d_z)
            self.kl = _kl_node(g, mu, logvar)
            z_enc = g.add(mu, g.mul(g.exp(g.scale(logvar, 0.5)), eta))
            recon = build_synthesis(g, generator, z_enc, nodes, "gen")
            self.rec = _clamped_bce_node(g, recon, x_real)
            total = g.add(total, g.add(g.scale(self.kl, kl_w), g.scale(self.rec, rec_w)))
        else:
            self.kl = None
            self.rec = None
        g.set_output(total)
        self.graph = g
        self.total = total


def _pretrain_seen_classifier(corpus, config: TrainConfig, seed: int) -> SeenClassifierParams:
    space = corpus.class_space
    x = feature_matrix(corpus.train_seen)
    y = label_matrix(corpus.train_seen, space.seen_indices)
    cfg = ClassifierConfig(epochs=config.pretrain_epochs, learning_rate=5e-2, batch_size=64, seed=seed)
    w, b = fit_linear(x, y, cfg)
    return SeenClassifierParams(w, b, frozen=True)


def train(objective: str, corpus, config: TrainConfig) -> TrainResult:
    """Alternating adversarial training; returns models plus per-epoch stats."""
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    if config.critic_steps < 1:
        raise ValueError("critic_steps must be at least 1")
    if config.batch_size < 1 or config.epochs < 0:
        raise ValueError("batch_size must be positive and epochs non-negative")
    if not corpus.train_seen:
        raise ValueError("training needs at least one seen instance")
    space: ClassSpace = corpus.class_space
    table: EmbeddingTable = corpus.embeddings
    d = corpus.train_seen[0].feature.shape[0]
    d_e = table.dim
    d_z = config.noise_dim or d_e
    n = len(corpus.train_seen)
    batch = min(config.batch_size, n)

    seed = int(config.seed)
    init_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    loop_rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))

    generator = init_generator(
        config.mode, d, d_e, d_z, config.gen_hidden, config.heads, config.mix_hidden, seed=init_rng
    )
    critic = init_critic(d, d_e, config.critic_hidden, seed=init_rng)
    encoder = (
        init_encoder(d, d_e, d_z, config.encoder_hidden, seed=init_rng)
        if objective == "VAEGAN"
        else None
    )
    seen_clf = _pretrain_seen_classifier(corpus, config, seed)

    width = max(inst.label_count for inst in corpus.train_seen)
    maker = _BatchMaker(corpus.train_seen, table, space.seen_count, width)

    synth_graph = SynthesisGraph(generator, batch, width, d_z, d_e)
    critic_graph = _CriticGraph(critic, batch, d, d_e, config.penalty_weight)
    gen_graph = _GeneratorGraph(
        objective, generator, critic, encoder, batch, d, d_e, d_z, width,
        space.seen_count, config.classifier_weight, config.kl_weight, config.reconstruction_weight,
    )

    gen_params = generator_param_dict("gen", generator)
    enc_params = mlp_param_dict("enc", encoder) if encoder is not None else {}
    critic_params = mlp_param_dict("critic", critic)
    fcls_params = seen_clf.param_dict()

    gen_state = AdamState(learning_rate=config.learning_rate)
    critic_state = AdamState(learning_rate=config.learning_rate)

    stream = _index_stream(loop_rng, n, batch)
    steps_per_epoch = max(1, n // batch)
    trace: list[EpochStats] = []

    def check(value: float, label: str) -> float:
        if not math.isfinite(value):
            raise TrainingDivergedError(f"{label} became non-finite")
        return value

    def run_graph(graph, bindings):
        try:
            return dm.evaluate(graph, bindings)
        except dm.GraphError as err:
            raise TrainingDivergedError(f"training diverged: {err}") from err

    for epoch in range(config.epochs):
        sums = np.zeros(6)  # critic obj, gap, penalty, gen loss, kl, rec
        cls_sum = 0.0
        for _ in range(steps_per_epoch):
            idx = None
            for _ in range(config.critic_steps):
                idx = next(stream)
                z = loop_rng.normal(size=(batch, d_z))
                x_synth = run_graph(
                    synth_graph.graph,
                    {"z": z, **maker.bindings(idx, generator.mode), **gen_params},
                )
                e = loop_rng.uniform(size=(batch, 1))
                x_real = maker.x[idx]
                bindings = {
                    "x_real": x_real,
                    "x_synth": x_synth,
                    "interp": e * x_real + (1.0 - e) * x_synth,
                    "pooled": maker.pooled[idx],
                    **critic_params,
                }
                run_graph(critic_graph.graph, bindings)
                g = critic_graph.graph
                sums[0] += check(float(g.value(critic_graph.objective)[0, 0]), "critic objective")
                sums[1] += float(g.value(critic_graph.gap)[0, 0])
                sums[2] += float(g.value(critic_graph.penalty)[0, 0])
                grads = dm.backward(g)
                critic_params = adam_step(
                    critic_state, critic_params, {k: grads[k] for k in critic_params}
                )
            z = loop_rng.normal(size=(batch, d_z))
            bindings = {
                "z": z,
                "y": maker.y[idx],
                **maker.bindings(idx, generator.mode),
                **gen_params,
                **enc_params,
                **critic_params,
                **fcls_params,
            }
            if objective == "VAEGAN":
                bindings["x_real"] = maker.x[idx]
                bindings["eta"] = loop_rng.normal(size=(batch, d_z))
            run_graph(gen_graph.graph, bindings)
            g = gen_graph.graph
            sums[3] += check(float(g.value(gen_graph.total)[0, 0]), "generator loss")
            cls_sum += float(g.value(gen_graph.cls_term)[0, 0])
            if objective == "VAEGAN":
                sums[4] += float(g.value(gen_graph.kl)[0, 0])
                sums[5] += float(g.value(gen_graph.rec)[0, 0])
            grads = dm.backward(g)
            joint = {**gen_params, **enc_params}
            joint = adam_step(gen_state, joint, {k: grads[k] for k in joint})
            gen_params = {k: joint[k] for k in gen_params}
            enc_params = {k: joint[k] for k in enc_params}
        critic_updates = steps_per_epoch * config.critic_steps
        trace.append(
            EpochStats(
                epoch=epoch,
                critic_loss=sums[0] / critic_updates,
                generator_loss=sums[3] / steps_per_epoch,
                kl=sums[4] / steps_per_epoch,
                reconstruction=sums[5] / steps_per_epoch,
                classifier_term=cls_sum / steps_per_epoch,
                wasserstein_gap=sums[1] / critic_updates,
                penalty=sums[2] / critic_updates,
            )
        )

    assign_generator(generator, "gen", gen_params)
    assign_mlp(critic, "critic", critic_params)
    if encoder is not None:
        assign_mlp(encoder, "enc", enc_params)
    models = ZslModels(generator, critic, encoder, seen_clf)
    return TrainResult(models, trace)


def synthesize_unseen(
    generator: GeneratorBundle,
    class_space: ClassSpace,
    table: EmbeddingTable,
    *,
    count_per_class: int,
    max_labels: int = 1,
    seed: int = 0,
    chunk: int = 256,
) -> list:
    """Synthesized unseen-class instances, ``count_per_class`` anchored per class.

    Each unseen class anchors ``count_per_class`` instances whose label
    sets contain it; extra co-labels are drawn uniformly without
    replacement from the other unseen classes, set sizes uniform on
    [1, max_labels].
    """
    unseen = list(class_space.unseen_indices)
    if not unseen:
        return []
    if count_per_class < 1:
        raise ValueError("count_per_class must be positive")
    if not 1 <= max_labels <= len(unseen):
        raise ValueError(f"max_labels={max_labels} must lie in [1, {len(unseen)}]")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 5]))
    sets = []
    for c in unseen:
        others = np.array([o for o in unseen if o != c])
        for _ in range(count_per_class):
            size = int(rng.integers(1, max_labels + 1))
            extra = rng.choice(others, size=size - 1, replace=False) if size > 1 else []
            sets.append(tuple(sorted([c, *map(int, extra)])))
    nets = generator.attr_net or generator.feat_net
    d_z = nets.in_dim - table.dim
    z = rng.normal(size=(len(sets), d_z))
    out = []
    graphs: dict[int, SynthesisGraph] = {}
    width = max(len(s) for s in sets)
    for start in range(0, len(sets), chunk):
        part = sets[start : start + chunk]
        b = len(part)
        if b not in graphs:
            graphs[b] = SynthesisGraph(generator, b, width, d_z, table.dim)
        inputs = make_synthesis_inputs(part, table, width=width)
        feats = graphs[b].run(z[start : start + b], inputs)
        out.extend(MultiLabelInstance(f, s) for f, s in zip(feats, part))
    return out
