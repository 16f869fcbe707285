"""Multi-label feature synthesis: attribute-level, feature-level and
cross-level fusion.

Attribute-level fusion (ALF) pools the label set's embeddings into one
condition and generates a single feature.  Feature-level fusion (FLF)
generates one latent feature per class with a fixed noise draw and
averages them, so each per-class latent is independent of its co-labels.
Cross-level fusion (CLF) stacks the two branch features into a 2 x d
matrix and refines it with multi-head attention over the two rows plus a
row-wise residual sub-network; the fused feature is the mean of the two
refined rows.

Per-instance ops canonicalize the order of their inputs (labels sorted,
or vectors sorted lexicographically when only vectors are in scope), so
outputs are bit-for-bit invariant to input permutations.  Batched graph
builders pad each instance to a fixed number of label slots; dummy slots
get zero pooling weight and therefore neither contribute values nor
gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffmath import Graph, Node, evaluate
from .nn import MlpParams, apply_mlp, glorot_uniform, init_mlp, mlp_forward, mlp_param_dict, _as_rng

MODES = ("ALF", "FLF", "CLF")


@dataclass
class ClfParams:
    """Cross-level fusion block: per-head projections, output map, residual net."""

    heads: int
    query: list  # heads arrays of d x (d/heads)
    key: list
    value: list
    output: np.ndarray  # d x d
    mix: MlpParams  # row-wise residual sub-network, d -> hidden -> d

    @property
    def dim(self) -> int:
        return self.output.shape[0]


def init_cross_fusion(dim: int, heads: int, mix_hidden: int, seed=0) -> ClfParams:
    if heads < 1:
        raise ValueError("need at least one attention head")
    if dim % heads != 0:
        raise ValueError(f"head count {heads} must divide feature dim {dim}")
    rng = _as_rng(seed)
    dp = dim // heads
    query = [glorot_uniform(rng, dim, dp) for _ in range(heads)]
    key = [glorot_uniform(rng, dim, dp) for _ in range(heads)]
    value = [glorot_uniform(rng, dim, dp) for _ in range(heads)]
    # zero output projections: the block starts as the identity residual
    # (fused output = mean of the two branches) and learns refinements
    output = np.zeros((dim, dim))
    mix = init_mlp(dim, mix_hidden, dim, "lrelu", "none", seed=rng)
    mix.layer2.weight = np.zeros_like(mix.layer2.weight)
    return ClfParams(heads, query, key, value, output, mix)


def clf_param_dict(name: str, p: ClfParams) -> dict[str, np.ndarray]:
    out = {}
    for h in range(p.heads):
        out[f"{name}.q{h}"] = p.query[h]
        out[f"{name}.k{h}"] = p.key[h]
        out[f"{name}.v{h}"] = p.value[h]
    out[f"{name}.out"] = p.output
    out.update(mlp_param_dict(f"{name}.res", p.mix))
    return out


def assign_clf(p: ClfParams, name: str, values: dict) -> None:
    for h in range(p.heads):
        p.query[h] = values[f"{name}.q{h}"]
        p.key[h] = values[f"{name}.k{h}"]
        p.value[h] = values[f"{name}.v{h}"]
    p.output = values[f"{name}.out"]
    from .nn import assign_mlp

    assign_mlp(p.mix, f"{name}.res", values)


@dataclass
class GeneratorBundle:
    """The generator stack for one fusion mode."""

    mode: str
    attr_net: MlpParams | None = None  # [noise + pooled embedding] -> feature
    feat_net: MlpParams | None = None  # [noise + class embedding] -> latent feature
    mixer: ClfParams | None = None  # cross-level fusion block


def init_generator(
    mode: str,
    feature_dim: int,
    embed_dim: int,
    noise_dim: int,
    hidden: int,
    heads: int = 8,
    mix_hidden: int = 128,
    seed=0,
) -> GeneratorBundle:
    if mode not in MODES:
        raise ValueError(f"unknown fusion mode {mode!r}")
    rng = _as_rng(seed)
    attr_net = feat_net = mixer = None
    if mode in ("ALF", "CLF"):
        attr_net = init_mlp(noise_dim + embed_dim, hidden, feature_dim, "lrelu", "sigmoid", seed=rng)
    if mode in ("FLF", "CLF"):
        feat_net = init_mlp(noise_dim + embed_dim, hidden, feature_dim, "lrelu", "sigmoid", seed=rng)
    if mode == "CLF":
        mixer = init_cross_fusion(feature_dim, heads, mix_hidden, seed=rng)
    return GeneratorBundle(mode, attr_net, feat_net, mixer)


def generator_param_dict(prefix: str, gen: GeneratorBundle) -> dict[str, np.ndarray]:
    out = {}
    if gen.attr_net is not None:
        out.update(mlp_param_dict(f"{prefix}.attr", gen.attr_net))
    if gen.feat_net is not None:
        out.update(mlp_param_dict(f"{prefix}.feat", gen.feat_net))
    if gen.mixer is not None:
        out.update(clf_param_dict(f"{prefix}.fuse", gen.mixer))
    return out


def assign_generator(gen: GeneratorBundle, prefix: str, values: dict) -> None:
    from .nn import assign_mlp

    if gen.attr_net is not None:
        assign_mlp(gen.attr_net, f"{prefix}.attr", values)
    if gen.feat_net is not None:
        assign_mlp(gen.feat_net, f"{prefix}.feat", values)
    if gen.mixer is not None:
        assign_clf(gen.mixer, f"{prefix}.fuse", values)


# ----------------------------------------------------------------------
# per-instance operations


def _canonical_rows(embeddings) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if arr.shape[0] < 1:
        raise ValueError("need at least one embedding")
    # lexicographic row order; makes averaging order-independent bit-for-bit
    order = np.lexsort(arr.T[::-1])
    return arr[order]


def alf_fuse(embeddings) -> np.ndarray:
    """Mean of the label set's embeddings, invariant to input order."""
    return _canonical_rows(embeddings).mean(axis=0)


def alf_generate(attr_net: MlpParams, z, embeddings) -> np.ndarray:
    pooled = alf_fuse(embeddings)
    inp = np.concatenate([np.asarray(z, dtype=np.float64).ravel(), pooled])
    return mlp_forward(attr_net, inp[None, :])[0]


def flf_generate(feat_net: MlpParams, z, embeddings) -> np.ndarray:
    """Average of per-class latents generated with the same noise draw.

    Latents are produced one row at a time so each class's latent is
    bit-for-bit independent of whatever other classes co-occur.
    """
    rows = _canonical_rows(embeddings)
    z = np.asarray(z, dtype=np.float64).ravel()
    latents = [mlp_forward(feat_net, np.concatenate([z, row])[None, :])[0] for row in rows]
    return np.mean(np.stack(latents), axis=0)


@dataclass
class FusionOutput:
    """Synthesized feature plus the fusion block's intermediate values."""

    feature: np.ndarray
    mode: str
    stacked: np.ndarray = None  # 2 x d, rows [feature-level; attribute-level]
    relations: list = None  # per head, the 2 x 2 row-softmax relation matrix
    attended: np.ndarray = None  # 2 x d rows after the output projection
    refined: np.ndarray = None  # 2 x d rows after the residual sub-network


def build_cross_fusion(
    g: Graph, name: str, params: ClfParams, branch_attr: Node, branch_feat: Node
):
    """Append the fusion block for a batch; rows of each operand are instances.

    Row 0 of the conceptual per-instance stack is the feature-level
    branch and row 1 the attribute-level branch; with only two rows the
    attention unrolls into four per-instance dot products per head, which
    keeps the whole batch inside fixed-shape matrix primitives.
    """
    b, d = branch_attr.shape
    if branch_feat.shape != (b, d):
        raise ValueError("fusion branches must have identical shapes")
    if d % params.heads != 0 or params.output.shape != (d, d):
        raise ValueError("fusion parameters do not match the feature width")
    dp = d // params.heads
    inv_sqrt = 1.0 / math.sqrt(dp)
    ones_dp = g.ones(1, dp)
    alpha_f = alpha_a = None
    relations = []
    for h in range(params.heads):
        wq = g.leaf(f"{name}.q{h}", (d, dp))
        wk = g.leaf(f"{name}.k{h}", (d, dp))
        wv = g.leaf(f"{name}.v{h}", (d, dp))
        qf, qa = g.matmul(branch_feat, wq), g.matmul(branch_attr, wq)
        kf, ka = g.matmul(branch_feat, wk), g.matmul(branch_attr, wk)
        vf, va = g.matmul(branch_feat, wv), g.matmul(branch_attr, wv)
        s_ff = g.scale(g.sum(g.mul(qf, kf), axis=1), inv_sqrt)
        s_fa = g.scale(g.sum(g.mul(qf, ka), axis=1), inv_sqrt)
        s_af = g.scale(g.sum(g.mul(qa, kf), axis=1), inv_sqrt)
        s_aa = g.scale(g.sum(g.mul(qa, ka), axis=1), inv_sqrt)
        rel_f = g.softmax_rows(g.concat_cols(s_ff, s_fa))  # b x 2
        rel_a = g.softmax_rows(g.concat_cols(s_af, s_aa))
        relations.append((rel_f, rel_a))
        wide = lambda col: g.matmul(col, ones_dp)  # noqa: E731
        att_f = g.add(
            g.mul(wide(g.slice_cols(rel_f, 0, 1)), vf),
            g.mul(wide(g.slice_cols(rel_f, 1, 2)), va),
        )
        att_a = g.add(
            g.mul(wide(g.slice_cols(rel_a, 0, 1)), vf),
            g.mul(wide(g.slice_cols(rel_a, 1, 2)), va),
        )
        alpha_f = att_f if alpha_f is None else g.concat_cols(alpha_f, att_f)
        alpha_a = att_a if alpha_a is None else g.concat_cols(alpha_a, att_a)
    wo = g.leaf(f"{name}.out", (d, d))
    o_f, o_a = g.matmul(alpha_f, wo), g.matmul(alpha_a, wo)
    u_f, u_a = g.add(branch_feat, o_f), g.add(branch_attr, o_a)
    t_f = g.add(apply_mlp(g, f"{name}.res", params.mix, u_f), u_f)
    t_a = g.add(apply_mlp(g, f"{name}.res", params.mix, u_a), u_a)
    fused = g.scale(g.add(t_f, t_a), 0.5)  # mean of the two refined rows
    internals = {
        "relations": relations,
        "o_f": o_f,
        "o_a": o_a,
        "t_f": t_f,
        "t_a": t_a,
    }
    return fused, internals


def clf_fuse(params: ClfParams, attr_feature, feat_feature) -> FusionOutput:
    """Fuse one instance's two branch features through the attention block."""
    attr = np.asarray(attr_feature, dtype=np.float64).reshape(1, -1)
    feat = np.asarray(feat_feature, dtype=np.float64).reshape(1, -1)
    if attr.shape != feat.shape:
        raise ValueError("branch features must share a width")
    g = Graph()
    a = g.const(attr)
    f = g.const(feat)
    fused, internals = build_cross_fusion(g, "fuse", params, a, f)
    value = evaluate(g, clf_param_dict("fuse", params), fused)
    rel = [
        np.vstack([g.value(rf), g.value(ra)])
        for rf, ra in internals["relations"]
    ]
    return FusionOutput(
        feature=value[0],
        mode="CLF",
        stacked=np.vstack([feat[0], attr[0]]),
        relations=rel,
        attended=np.vstack([g.value(internals["o_f"])[0], g.value(internals["o_a"])[0]]),
        refined=np.vstack([g.value(internals["t_f"])[0], g.value(internals["t_a"])[0]]),
    )


def synthesize(mode: str, models: GeneratorBundle, z, embeddings) -> np.ndarray:
    """One synthesized feature for a label set given noise ``z``."""
    if mode not in MODES:
        raise ValueError(f"unknown fusion mode {mode!r}")
    if mode == "ALF":
        return alf_generate(models.attr_net, z, embeddings)
    if mode == "FLF":
        return flf_generate(models.feat_net, z, embeddings)
    attr = alf_generate(models.attr_net, z, embeddings)
    feat = flf_generate(models.feat_net, z, embeddings)
    return clf_fuse(models.mixer, attr, feat).feature


# ----------------------------------------------------------------------
# batched synthesis (fixed shapes, shared with the adversarial trainer)


@dataclass
class SynthesisInputs:
    pooled: np.ndarray  # b x d_e mean embedding per instance
    pair_embeddings: np.ndarray  # (b*w) x d_e, zero rows on dummy slots
    expand: np.ndarray  # (b*w) x b selector copying each instance's noise row
    pool_weights: np.ndarray  # b x (b*w), 1/n on live slots
    width: int


def make_synthesis_inputs(label_sets, table, width: int | None = None) -> SynthesisInputs:
    sets = [tuple(sorted(set(int(l) for l in s))) for s in label_sets]
    if any(len(s) == 0 for s in sets):
        raise ValueError("label sets must be non-empty")
    b = len(sets)
    need = max(len(s) for s in sets)
    w = need if width is None else int(width)
    if need > w:
        raise ValueError(f"label set of size {need} exceeds pad width {w}")
    d_e = table.dim
    pooled = np.stack([table.rows(s).mean(axis=0) for s in sets])
    pair_embeddings = np.zeros((b * w, d_e))
    expand = np.zeros((b * w, b))
    pool_weights = np.zeros((b, b * w))
    for i, s in enumerate(sets):
        for k in range(w):
            expand[i * w + k, i] = 1.0
        for k, label in enumerate(s):
            pair_embeddings[i * w + k] = table.vectors[label]
            pool_weights[i, i * w + k] = 1.0 / len(s)
    return SynthesisInputs(pooled, pair_embeddings, expand, pool_weights, w)


@dataclass
class SynthesisNodes:
    pooled: Node
    pair_embeddings: Node | None = None
    expand: Node | None = None
    pool_weights: Node | None = None


def declare_synthesis_leaves(g: Graph, batch: int, width: int, embed_dim: int, mode: str) -> SynthesisNodes:
    pooled = g.leaf("pooled", (batch, embed_dim))
    if mode == "ALF":
        return SynthesisNodes(pooled)
    return SynthesisNodes(
        pooled,
        g.leaf("pairs", (batch * width, embed_dim)),
        g.leaf("expand", (batch * width, batch)),
        g.leaf("weights", (batch, batch * width)),
    )


def bind_synthesis_inputs(inputs: SynthesisInputs, mode: str) -> dict[str, np.ndarray]:
    bindings = {"pooled": inputs.pooled}
    if mode != "ALF":
        bindings.update(
            pairs=inputs.pair_embeddings, expand=inputs.expand, weights=inputs.pool_weights
        )
    return bindings


def build_synthesis(g: Graph, generator: GeneratorBundle, z: Node, nodes: SynthesisNodes, prefix: str = "gen") -> Node:
    """Append the generator stack for a batch; returns the b x d feature node."""
    mode = generator.mode
    branch_attr = branch_feat = None
    if mode in ("ALF", "CLF"):
        inp = g.concat_cols(z, nodes.pooled)
        branch_attr = apply_mlp(g, f"{prefix}.attr", generator.attr_net, inp)
    if mode in ("FLF", "CLF"):
        z_rows = g.matmul(nodes.expand, z)  # copy each instance's noise to its slots
        inp = g.concat_cols(z_rows, nodes.pair_embeddings)
        latents = apply_mlp(g, f"{prefix}.feat", generator.feat_net, inp)
        branch_feat = g.matmul(nodes.pool_weights, latents)
    if mode == "ALF":
        return branch_attr
    if mode == "FLF":
        return branch_feat
    fused, _ = build_cross_fusion(g, f"{prefix}.fuse", generator.mixer, branch_attr, branch_feat)
    return fused


class SynthesisGraph:
    """Reusable numeric forward graph for a fixed batch size and pad width."""

    def __init__(self, generator: GeneratorBundle, batch: int, width: int, noise_dim: int, embed_dim: int):
        g = Graph()
        z = g.leaf("z", (batch, noise_dim))
        nodes = declare_synthesis_leaves(g, batch, width, embed_dim, generator.mode)
        out = build_synthesis(g, generator, z, nodes, "gen")
        g.set_output(out)
        self.graph = g
        self.generator = generator
        self.batch = batch

    def run(self, z: np.ndarray, inputs: SynthesisInputs) -> np.ndarray:
        bindings = bind_synthesis_inputs(inputs, self.generator.mode)
        bindings["z"] = z
        bindings.update(generator_param_dict("gen", self.generator))
        return evaluate(self.graph, bindings)


def synthesize_batch(generator: GeneratorBundle, z: np.ndarray, label_sets, table) -> np.ndarray:
    """One-shot batched synthesis (builds a graph sized to this batch)."""
    inputs = make_synthesis_inputs(label_sets, table)
    sg = SynthesisGraph(generator, len(label_sets), inputs.width, z.shape[1], table.dim)
    return sg.run(z, inputs)
