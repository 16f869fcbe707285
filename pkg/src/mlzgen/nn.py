"""Dense building blocks on top of the graph engine.

Two-layer perceptrons with Glorot-uniform init, graph-side application
helpers (parameters enter graphs as named leaves so several call sites
share one copy), and a dict-keyed Adam optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diffmath import Graph, Node, evaluate

ACTIVATIONS = ("none", "lrelu", "sigmoid")
LEAKY_SLOPE = 0.2


@dataclass
class LinearParams:
    """Affine map: weight is in x out, bias a 1 x out row."""

    weight: np.ndarray
    bias: np.ndarray


@dataclass
class MlpParams:
    """Two-layer perceptron with configurable activations."""

    layer1: LinearParams
    layer2: LinearParams
    hidden_activation: str = "lrelu"
    output_activation: str = "none"

    @property
    def in_dim(self) -> int:
        return self.layer1.weight.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.layer1.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layer2.weight.shape[1]


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_linear(in_dim: int, out_dim: int, rng: np.random.Generator) -> LinearParams:
    if in_dim <= 0 or out_dim <= 0:
        raise ValueError(f"non-positive layer dims ({in_dim}, {out_dim})")
    return LinearParams(glorot_uniform(rng, in_dim, out_dim), np.zeros((1, out_dim)))


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def init_mlp(
    in_dim: int,
    hidden_dim: int,
    out_dim: int,
    hidden_activation: str = "lrelu",
    output_activation: str = "none",
    seed=0,
) -> MlpParams:
    """Glorot-uniform weights, zero biases; deterministic for a given seed."""
    for name in (hidden_activation, output_activation):
        if name not in ACTIVATIONS:
            raise ValueError(f"unknown activation {name!r}")
    rng = _as_rng(seed)
    return MlpParams(
        init_linear(in_dim, hidden_dim, rng),
        init_linear(hidden_dim, out_dim, rng),
        hidden_activation,
        output_activation,
    )


def apply_activation(g: Graph, node: Node, kind: str) -> Node:
    if kind == "none":
        return node
    if kind == "lrelu":
        return g.leaky_relu(node, LEAKY_SLOPE)
    if kind == "sigmoid":
        return g.sigmoid(node)
    raise ValueError(f"unknown activation {kind!r}")


def apply_linear(g: Graph, name: str, params: LinearParams, x: Node) -> Node:
    w = g.leaf(f"{name}.w", params.weight.shape)
    b = g.leaf(f"{name}.b", params.bias.shape)
    rows = x.shape[0]
    return g.add(g.matmul(x, w), g.broadcast_rows(b, rows))


def apply_mlp(g: Graph, name: str, params: MlpParams, x: Node) -> Node:
    """Append the MLP's nodes to ``g``; parameters become ``{name}.*`` leaves."""
    if x.shape[1] != params.in_dim:
        raise ValueError(
            f"mlp {name!r} expects input width {params.in_dim}, got {x.shape[1]}"
        )
    h = apply_linear(g, f"{name}.1", params.layer1, x)
    h = apply_activation(g, h, params.hidden_activation)
    out = apply_linear(g, f"{name}.2", params.layer2, h)
    return apply_activation(g, out, params.output_activation)


def mlp_param_dict(name: str, params: MlpParams) -> dict[str, np.ndarray]:
    return {
        f"{name}.1.w": params.layer1.weight,
        f"{name}.1.b": params.layer1.bias,
        f"{name}.2.w": params.layer2.weight,
        f"{name}.2.b": params.layer2.bias,
    }


def assign_mlp(params: MlpParams, name: str, values: dict[str, np.ndarray]) -> None:
    params.layer1.weight = values[f"{name}.1.w"]
    params.layer1.bias = values[f"{name}.1.b"]
    params.layer2.weight = values[f"{name}.2.w"]
    params.layer2.bias = values[f"{name}.2.b"]


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """Numeric forward pass for a batch of rows (built on the graph engine)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    g = Graph()
    xn = g.leaf("x", x.shape)
    out = apply_mlp(g, "net", params, xn)
    bindings = {"x": x, **mlp_param_dict("net", params)}
    return evaluate(g, bindings, out)


@dataclass
class AdamState:
    """Per-tensor moment accumulators keyed like the parameter dict."""

    learning_rate: float
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam update; returns the new parameter dict.

    The very first step moves each entry by at most the learning rate
    (|g| / (|g| + eps) <= 1 after bias correction).
    """
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    new = {}
    for key, p in params.items():
        gk = grads[key]
        if gk.shape != p.shape:
            raise ValueError(f"grad shape {gk.shape} != param shape {p.shape} for {key!r}")
        m = state.first_moment.get(key)
        v = state.second_moment.get(key)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * gk
        v = state.beta2 * v + (1.0 - state.beta2) * gk * gk
        state.first_moment[key] = m
        state.second_moment[key] = v
        new[key] = p - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return new
