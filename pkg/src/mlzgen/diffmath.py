"""Reverse-mode automatic differentiation over dense 2-D float64 arrays.

A :class:`Graph` is an append-only sequence of primitive operations on
matrices.  Leaves are named inputs; every other node derives from earlier
nodes, so the node list is always in topological order.  ``evaluate``
binds leaves and computes every node (intermediates are retained),
``backward`` runs a numeric reverse sweep and returns d(output)/d(leaf)
for every leaf of a scalar output, and ``grad_as_graph`` instead *builds*
the derivative as new nodes in the same primitive set.  Because the
derivative is itself a graph, it can be evaluated and differentiated
again, which is exactly what gradient-penalty style objectives need:
differentiate a critic w.r.t. its input, build a penalty on that
gradient, then backpropagate the penalty into the critic's weights.

Conventions:

* everything is 2-D: row vectors are ``1 x n``, scalars ``1 x 1``;
* all data is float64; leaf bindings are coerced and shape-checked;
* every node value is checked for NaN/inf during evaluation and failures
  are reported with the offending node's index and operation;
* replaying a graph on identical leaf values is bit-for-bit reproducible.

The primitive set is closed under differentiation: each primitive's
adjoint is expressible with primitives (matmul carries transpose flags,
reciprocals appear as ``exp(-log x)``, and the leaky-rectifier derivative
is its own piecewise-constant primitive whose derivative is zero almost
everywhere).
"""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

__all__ = [
    "Graph",
    "GraphError",
    "Node",
    "as_tensor",
    "backward",
    "evaluate",
    "grad_as_graph",
]


class GraphError(ValueError):
    """Structural or numerical failure attributed to one graph node."""

    def __init__(self, message: str, node: int | None = None, op: str | None = None):
        if node is not None:
            message = f"node {node} ({op}): {message}"
        super().__init__(message)
        self.node = node
        self.op = op


def as_tensor(value) -> np.ndarray:
    """Coerce to a C-contiguous float64 matrix.

    Scalars become ``1 x 1`` and flat vectors become ``1 x n`` rows;
    anything above rank 2 is rejected.
    """
    arr = np.ascontiguousarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise GraphError(f"expected scalar, vector or matrix, got ndim={arr.ndim}")
    if arr.size == 0:
        raise GraphError("empty tensors are not allowed")
    return arr


class Node:
    """Lightweight handle to one node of a :class:`Graph`."""

    __slots__ = ("graph", "idx")

    def __init__(self, graph: "Graph", idx: int):
        self.graph = graph
        self.idx = idx

    @property
    def shape(self) -> tuple[int, int]:
        return self.graph._shapes[self.idx]

    def __add__(self, other: "Node") -> "Node":
        return self.graph.add(self, other)

    def __sub__(self, other: "Node") -> "Node":
        return self.graph.sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Node):
            return self.graph.mul(self, other)
        return self.graph.scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Node":
        return self.graph.scale(self, -1.0)

    def __repr__(self) -> str:
        g = self.graph
        return f"Node({g._ops[self.idx]}#{self.idx}, shape={g._shapes[self.idx]})"


class Graph:
    """Append-only computation graph over 2-D float64 tensors."""

    def __init__(self):
        self._ops: list[str] = []
        self._parents: list[tuple[int, ...]] = []
        self._attrs: list = []
        self._shapes: list[tuple[int, int]] = []
        self._leaves: dict[str, int] = {}
        self._values: list[np.ndarray] | None = None
        self._output: int | None = None
        self._unit_cache: dict[tuple, int] = {}

    # ------------------------------------------------------------------
    # construction

    def __len__(self) -> int:
        return len(self._ops)

    def _append(self, op: str, parents: tuple[int, ...], attr, shape: tuple[int, int]) -> Node:
        self._ops.append(op)
        self._parents.append(parents)
        self._attrs.append(attr)
        self._shapes.append(shape)
        self._values = None  # structure changed; stale values must not leak
        return Node(self, len(self._ops) - 1)

    def _node_in(self, x) -> int:
        if not isinstance(x, Node):
            raise GraphError(f"expected a Node, got {type(x).__name__}")
        if x.graph is not self:
            raise GraphError("node belongs to a different graph")
        return x.idx

    def leaf(self, name: str, shape) -> Node:
        """Declare (or fetch) the named input leaf.

        Re-declaring an existing leaf returns the original node after a
        shape check, so model parameters referenced from several places
        share a single leaf.
        """
        shape = (int(shape[0]), int(shape[1]))
        if shape[0] <= 0 or shape[1] <= 0:
            raise GraphError(f"leaf {name!r}: non-positive shape {shape}")
        if name in self._leaves:
            idx = self._leaves[name]
            if self._shapes[idx] != shape:
                raise GraphError(
                    f"leaf {name!r} re-declared with shape {shape}, "
                    f"already {self._shapes[idx]}"
                )
            return Node(self, idx)
        node = self._append("leaf", (), name, shape)
        self._leaves[name] = node.idx
        return node

    def const(self, value) -> Node:
        arr = as_tensor(value)
        if not np.isfinite(arr).all():
            raise GraphError("constant contains non-finite entries")
        return self._append("const", (), arr, arr.shape)

    def ones(self, rows: int, cols: int) -> Node:
        key = ("ones", rows, cols)
        if key not in self._unit_cache:
            self._unit_cache[key] = self.const(np.ones((rows, cols))).idx
        return Node(self, self._unit_cache[key])

    def zeros(self, rows: int, cols: int) -> Node:
        key = ("zeros", rows, cols)
        if key not in self._unit_cache:
            self._unit_cache[key] = self.const(np.zeros((rows, cols))).idx
        return Node(self, self._unit_cache[key])

    # -- primitset -------------------------------------------------------

    def matmul(self, a, b, transpose_a: bool = False, transpose_b: bool = False) -> Node:
        ia, ib = self._node_in(a), self._node_in(b)
        (ar, ac), (br, bc) = self._shapes[ia], self._shapes[ib]
        if transpose_a:
            ar, ac = ac, ar
        if transpose_b:
            br, bc = bc, br
        if ac != br:
            raise GraphError(f"matmul inner dims {ac} != {br}")
        return self._append("matmul", (ia, ib), (transpose_a, transpose_b), (ar, bc))

    def _same_shape(self, op: str, a, b) -> tuple[int, int, tuple[int, int]]:
        ia, ib = self._node_in(a), self._node_in(b)
        sa, sb = self._shapes[ia], self._shapes[ib]
        if sa != sb:
            raise GraphError(f"{op} shape mismatch {sa} vs {sb}")
        return ia, ib, sa

    def add(self, a, b) -> Node:
        ia, ib, s = self._same_shape("add", a, b)
        return self._append("add", (ia, ib), None, s)

    def sub(self, a, b) -> Node:
        ia, ib, s = self._same_shape("sub", a, b)
        return self._append("sub", (ia, ib), None, s)

    def mul(self, a, b) -> Node:
        ia, ib, s = self._same_shape("mul", a, b)
        return self._append("mul", (ia, ib), None, s)

    def scale(self, a, factor: float) -> Node:
        ia = self._node_in(a)
        factor = float(factor)
        if not math.isfinite(factor):
            raise GraphError("scale factor must be finite")
        return self._append("scale", (ia,), factor, self._shapes[ia])

    def _reduce_shape(self, ia: int, axis) -> tuple[int, int]:
        r, c = self._shapes[ia]
        if axis is None:
            return (1, 1)
        if axis == 0:
            return (1, c)
        if axis == 1:
            return (r, 1)
        raise GraphError(f"axis must be None, 0 or 1, got {axis!r}")

    def sum(self, a, axis=None) -> Node:
        ia = self._node_in(a)
        return self._append("sum", (ia,), axis, self._reduce_shape(ia, axis))

    def mean(self, a, axis=None) -> Node:
        ia = self._node_in(a)
        return self._append("mean", (ia,), axis, self._reduce_shape(ia, axis))

    def softmax_rows(self, a) -> Node:
        ia = self._node_in(a)
        return self._append("softmax", (ia,), None, self._shapes[ia])

    def leaky_relu(self, a, slope: float = 0.2) -> Node:
        ia = self._node_in(a)
        return self._append("lrelu", (ia,), float(slope), self._shapes[ia])

    def leaky_relu_grad(self, a, slope: float = 0.2) -> Node:
        """Pointwise derivative mask of the leaky rectifier.

        Piecewise constant, so its own derivative is zero almost
        everywhere; this is what keeps the set closed under a second
        differentiation pass.
        """
        ia = self._node_in(a)
        return self._append("lrelu_grad", (ia,), float(slope), self._shapes[ia])

    def sigmoid(self, a) -> Node:
        ia = self._node_in(a)
        return self._append("sigmoid", (ia,), None, self._shapes[ia])

    def log(self, a) -> Node:
        ia = self._node_in(a)
        return self._append("log", (ia,), None, self._shapes[ia])

    def exp(self, a) -> Node:
        ia = self._node_in(a)
        return self._append("exp", (ia,), None, self._shapes[ia])

    def square(self, a) -> Node:
        ia = self._node_in(a)
        return self._append("square", (ia,), None, self._shapes[ia])

    def sqrt(self, a) -> Node:
        ia = self._node_in(a)
        return self._append("sqrt", (ia,), None, self._shapes[ia])

    def l2_norm(self, a, axis=None) -> Node:
        ia = self._node_in(a)
        return self._append("l2norm", (ia,), axis, self._reduce_shape(ia, axis))

    def concat_rows(self, a, b) -> Node:
        ia, ib = self._node_in(a), self._node_in(b)
        (ar, ac), (br, bc) = self._shapes[ia], self._shapes[ib]
        if ac != bc:
            raise GraphError(f"concat_rows column mismatch {ac} vs {bc}")
        return self._append("concat_rows", (ia, ib), None, (ar + br, ac))

    def concat_cols(self, a, b) -> Node:
        ia, ib = self._node_in(a), self._node_in(b)
        (ar, ac), (br, bc) = self._shapes[ia], self._shapes[ib]
        if ar != br:
            raise GraphError(f"concat_cols row mismatch {ar} vs {br}")
        return self._append("concat_cols", (ia, ib), None, (ar, ac + bc))

    def slice_rows(self, a, start: int, stop: int) -> Node:
        ia = self._node_in(a)
        r, c = self._shapes[ia]
        if not (0 <= start < stop <= r):
            raise GraphError(f"slice_rows [{start}:{stop}] out of range for {r} rows")
        return self._append("slice_rows", (ia,), (start, stop), (stop - start, c))

    def slice_cols(self, a, start: int, stop: int) -> Node:
        ia = self._node_in(a)
        r, c = self._shapes[ia]
        if not (0 <= start < stop <= c):
            raise GraphError(f"slice_cols [{start}:{stop}] out of range for {c} cols")
        return self._append("slice_cols", (ia,), (start, stop), (r, stop - start))

    def broadcast_rows(self, a, rows: int) -> Node:
        ia = self._node_in(a)
        r, c = self._shapes[ia]
        if r != 1:
            raise GraphError(f"broadcast_rows needs a 1 x n row, got {self._shapes[ia]}")
        if rows <= 0:
            raise GraphError("broadcast_rows needs a positive row count")
        return self._append("bcast_rows", (ia,), rows, (rows, c))

    # ------------------------------------------------------------------
    # inspection / execution helpers

    def value(self, node: Node) -> np.ndarray:
        """Value of ``node`` from the most recent evaluation."""
        if self._values is None:
            raise GraphError("graph has not been evaluated")
        return self._values[self._node_in(node)]

    def set_output(self, node: Node) -> None:
        self._output = self._node_in(node)

    @property
    def output(self) -> Node | None:
        return None if self._output is None else Node(self, self._output)

    def leaf_names(self) -> list[str]:
        return list(self._leaves)

    def grad(self, output: Node, wrt) -> Node:
        """Append nodes computing d(output)/d(wrt) and return their root.

        ``wrt`` is a leaf node or leaf name.  The output must be scalar.
        The returned node is an ordinary graph node, so penalties built on
        it remain differentiable by :func:`backward`.
        """
        out_idx = self._node_in(output)
        if self._shapes[out_idx] != (1, 1):
            raise GraphError(
                f"gradient target must be scalar, got {self._shapes[out_idx]}",
                node=out_idx,
                op=self._ops[out_idx],
            )
        if isinstance(wrt, str):
            if wrt not in self._leaves:
                raise GraphError(f"unknown leaf {wrt!r}")
            wrt_idx = self._leaves[wrt]
        else:
            wrt_idx = self._node_in(wrt)
        if self._ops[wrt_idx] != "leaf":
            raise GraphError("gradients are taken w.r.t. leaves only", node=wrt_idx, op=self._ops[wrt_idx])
        return _symbolic_grad(self, out_idx, wrt_idx)

    def clone(self) -> "Graph":
        g = Graph()
        g._ops = list(self._ops)
        g._parents = list(self._parents)
        g._attrs = list(self._attrs)
        g._shapes = list(self._shapes)
        g._leaves = dict(self._leaves)
        g._output = self._output
        g._unit_cache = dict(self._unit_cache)
        return g


# ----------------------------------------------------------------------
# forward execution


def evaluate(graph: Graph, bindings: dict, output: Node | None = None) -> np.ndarray:
    """Run the graph on the given leaf bindings.

    Every node value is retained on the graph for ``backward`` /
    ``Graph.value``.  Returns the value of ``output`` (or the designated
    output node, or the last node).  Missing/extra bindings, shape
    mismatches and non-finite intermediate values raise
    :class:`GraphError` naming the offending node.
    """
    n = len(graph._ops)
    if n == 0:
        raise GraphError("empty graph")
    bound = {}
    for name, value in bindings.items():
        if name not in graph._leaves:
            raise GraphError(f"binding for unknown leaf {name!r}")
        bound[name] = as_tensor(value)
    vals: list = [None] * n
    # overflow/domain issues surface as the non-finite check's GraphError,
    # not as numpy warnings
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        _evaluate_nodes(graph, bound, vals)
    graph._values = vals
    if output is not None:
        out_idx = graph._node_in(output)
    elif graph._output is not None:
        out_idx = graph._output
    else:
        out_idx = n - 1
    return vals[out_idx]


def _evaluate_nodes(graph: Graph, bound: dict, vals: list) -> None:
    for i in range(len(graph._ops)):
        op = graph._ops[i]
        ps = graph._parents[i]
        attr = graph._attrs[i]
        if op == "leaf":
            if attr not in bound:
                raise GraphError(f"missing binding for leaf {attr!r}", node=i, op=op)
            v = bound[attr]
            if v.shape != graph._shapes[i]:
                raise GraphError(
                    f"leaf {attr!r} bound with shape {v.shape}, declared {graph._shapes[i]}",
                    node=i,
                    op=op,
                )
        elif op == "const":
            v = attr
        elif op == "matmul":
            a, b = vals[ps[0]], vals[ps[1]]
            ta, tb = attr
            v = (a.T if ta else a) @ (b.T if tb else b)
        elif op == "add":
            v = vals[ps[0]] + vals[ps[1]]
        elif op == "sub":
            v = vals[ps[0]] - vals[ps[1]]
        elif op == "mul":
            v = vals[ps[0]] * vals[ps[1]]
        elif op == "scale":
            v = vals[ps[0]] * attr
        elif op == "sum":
            v = vals[ps[0]].sum(axis=attr, keepdims=True)
            if attr is None:
                v = v.reshape(1, 1)
        elif op == "mean":
            v = vals[ps[0]].mean(axis=attr, keepdims=True)
            if attr is None:
                v = v.reshape(1, 1)
        elif op == "softmax":
            a = vals[ps[0]]
            shifted = a - a.max(axis=1, keepdims=True)  # max-subtraction for stability
            e = np.exp(shifted)
            v = e / e.sum(axis=1, keepdims=True)
        elif op == "lrelu":
            a = vals[ps[0]]
            v = np.where(a > 0.0, a, attr * a)
        elif op == "lrelu_grad":
            a = vals[ps[0]]
            v = np.where(a > 0.0, 1.0, attr)
        elif op == "sigmoid":
            a = vals[ps[0]]
            # evaluate on the negative side only so exp never overflows
            v = np.empty_like(a)
            pos = a >= 0
            v[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
            ea = np.exp(a[~pos])
            v[~pos] = ea / (1.0 + ea)
        elif op == "log":
            v = np.log(vals[ps[0]])
        elif op == "exp":
            v = np.exp(vals[ps[0]])
        elif op == "square":
            a = vals[ps[0]]
            v = a * a
        elif op == "sqrt":
            v = np.sqrt(vals[ps[0]])
        elif op == "l2norm":
            a = vals[ps[0]]
            v = np.sqrt((a * a).sum(axis=attr, keepdims=True))
            if attr is None:
                v = v.reshape(1, 1)
        elif op == "concat_rows":
            v = np.concatenate((vals[ps[0]], vals[ps[1]]), axis=0)
        elif op == "concat_cols":
            v = np.concatenate((vals[ps[0]], vals[ps[1]]), axis=1)
        elif op == "slice_rows":
            v = vals[ps[0]][attr[0]:attr[1]]
        elif op == "slice_cols":
            v = vals[ps[0]][:, attr[0]:attr[1]]
        elif op == "bcast_rows":
            v = np.broadcast_to(vals[ps[0]], (attr, graph._shapes[ps[0]][1]))
        else:  # pragma: no cover - construction prevents unknown ops
            raise GraphError(f"unknown op {op!r}", node=i, op=op)
        s = float(np.sum(v))
        if not math.isfinite(s) and not np.isfinite(v).all():
            raise GraphError("non-finite value produced", node=i, op=op)
        vals[i] = v


# ----------------------------------------------------------------------
# numeric reverse sweep


def backward(graph: Graph, output: Node | None = None) -> dict[str, np.ndarray]:
    """Gradients of a scalar output w.r.t. every leaf.

    Requires a prior ``evaluate`` on this graph.  Leaves that do not
    influence the output get zero gradients of their declared shape.
    """
    if graph._values is None:
        raise GraphError("backward before evaluate")
    if output is not None:
        out = graph._node_in(output)
    elif graph._output is not None:
        out = graph._output
    else:
        out = len(graph._ops) - 1
    if graph._shapes[out] != (1, 1):
        raise GraphError(
            f"backward needs a scalar output, got {graph._shapes[out]}",
            node=out,
            op=graph._ops[out],
        )
    vals = graph._values
    adj: list = [None] * (out + 1)
    adj[out] = np.ones((1, 1))
    for i in range(out, -1, -1):
        gbar = adj[i]
        if gbar is None:
            continue
        op = graph._ops[i]
        if op in ("leaf", "const"):
            continue
        for p, contrib in _numeric_vjp(graph, i, gbar, vals):
            if adj[p] is None:
                adj[p] = contrib
            else:
                adj[p] = adj[p] + contrib
    grads: dict[str, np.ndarray] = {}
    for name, idx in graph._leaves.items():
        if idx <= out and adj[idx] is not None:
            grads[name] = np.ascontiguousarray(adj[idx])
        else:
            grads[name] = np.zeros(graph._shapes[idx])
    return grads


def _numeric_vjp(graph: Graph, i: int, gbar: np.ndarray, vals) -> Iterable[tuple[int, np.ndarray]]:
    op = graph._ops[i]
    ps = graph._parents[i]
    attr = graph._attrs[i]
    if op == "matmul":
        ta, tb = attr
        a, b = vals[ps[0]], vals[ps[1]]
        if not ta and not tb:
            yield ps[0], gbar @ b.T
            yield ps[1], a.T @ gbar
        elif not ta and tb:
            yield ps[0], gbar @ b
            yield ps[1], gbar.T @ a
        elif ta and not tb:
            yield ps[0], b @ gbar.T
            yield ps[1], a @ gbar
        else:
            yield ps[0], b.T @ gbar.T
            yield ps[1], gbar.T @ a.T
    elif op == "add":
        yield ps[0], gbar
        yield ps[1], gbar
    elif op == "sub":
        yield ps[0], gbar
        yield ps[1], -gbar
    elif op == "mul":
        yield ps[0], gbar * vals[ps[1]]
        yield ps[1], gbar * vals[ps[0]]
    elif op == "scale":
        yield ps[0], gbar * attr
    elif op == "sum":
        yield ps[0], np.broadcast_to(gbar, graph._shapes[ps[0]])
    elif op == "mean":
        r, c = graph._shapes[ps[0]]
        k = r * c if attr is None else (r if attr == 0 else c)
        yield ps[0], np.broadcast_to(gbar / k, (r, c))
    elif op == "softmax":
        s = vals[i]
        yield ps[0], s * (gbar - (gbar * s).sum(axis=1, keepdims=True))
    elif op == "lrelu":
        a = vals[ps[0]]
        yield ps[0], gbar * np.where(a > 0.0, 1.0, attr)
    elif op == "lrelu_grad":
        pass  # piecewise constant: zero almost everywhere
    elif op == "sigmoid":
        s = vals[i]
        yield ps[0], gbar * s * (1.0 - s)
    elif op == "log":
        yield ps[0], gbar / vals[ps[0]]
    elif op == "exp":
        yield ps[0], gbar * vals[i]
    elif op == "square":
        yield ps[0], 2.0 * gbar * vals[ps[0]]
    elif op == "sqrt":
        yield ps[0], gbar / (2.0 * vals[i])
    elif op == "l2norm":
        a = vals[ps[0]]
        yield ps[0], a * (gbar / vals[i])
    elif op == "concat_rows":
        n1 = graph._shapes[ps[0]][0]
        yield ps[0], gbar[:n1]
        yield ps[1], gbar[n1:]
    elif op == "concat_cols":
        c1 = graph._shapes[ps[0]][1]
        yield ps[0], gbar[:, :c1]
        yield ps[1], gbar[:, c1:]
    elif op == "slice_rows":
        full = np.zeros(graph._shapes[ps[0]])
        full[attr[0]:attr[1]] = gbar
        yield ps[0], full
    elif op == "slice_cols":
        full = np.zeros(graph._shapes[ps[0]])
        full[:, attr[0]:attr[1]] = gbar
        yield ps[0], full
    elif op == "bcast_rows":
        yield ps[0], gbar.sum(axis=0, keepdims=True)
    else:  # pragma: no cover
        raise GraphError(f"no adjoint for op {op!r}", node=i, op=op)


# ----------------------------------------------------------------------
# symbolic (source-to-source) differentiation


def grad_as_graph(graph: Graph, output: Node, wrt) -> Graph:
    """New graph whose designated output is d(output)/d(wrt).

    The clone shares leaf names with the source graph, keeps all forward
    nodes (indices are preserved), and appends adjoint nodes built from
    the same primitive set, so the result is differentiable again.
    """
    out_idx = graph._node_in(output)
    g2 = graph.clone()
    if isinstance(wrt, Node):
        wrt = Node(g2, graph._node_in(wrt))  # same index in the clone
    node = g2.grad(Node(g2, out_idx), wrt)
    g2.set_output(node)
    return g2


def _broadcast_like(g: Graph, gbar: Node, axis, shape: tuple[int, int]) -> Node:
    """Expand a reduced adjoint back to ``shape`` (sum/mean/l2norm adjoints)."""
    r, c = shape
    if axis is None:
        return g.matmul(g.matmul(g.ones(r, 1), gbar), g.ones(1, c))
    if axis == 0:
        return g.broadcast_rows(gbar, r)
    return g.matmul(gbar, g.ones(1, c))


def _reciprocal(g: Graph, x: Node) -> Node:
    # 1/x for strictly positive x, inside the primitive set
    return g.exp(g.scale(g.log(x), -1.0))


def _symbolic_vjp(g: Graph, i: int, gbar: Node) -> Iterable[tuple[int, Node]]:
    op = g._ops[i]
    ps = g._parents[i]
    attr = g._attrs[i]
    self_node = Node(g, i)
    parent = lambda k: Node(g, ps[k])  # noqa: E731
    if op == "matmul":
        ta, tb = attr
        if not ta and not tb:
            yield ps[0], g.matmul(gbar, parent(1), transpose_b=True)
            yield ps[1], g.matmul(parent(0), gbar, transpose_a=True)
        elif not ta and tb:
            yield ps[0], g.matmul(gbar, parent(1))
            yield ps[1], g.matmul(gbar, parent(0), transpose_a=True)
        elif ta and not tb:
            yield ps[0], g.matmul(parent(1), gbar, transpose_b=True)
            yield ps[1], g.matmul(parent(0), gbar)
        else:
            yield ps[0], g.matmul(parent(1), gbar, transpose_a=True, transpose_b=True)
            yield ps[1], g.matmul(gbar, parent(0), transpose_a=True, transpose_b=True)
    elif op == "add":
        yield ps[0], gbar
        yield ps[1], gbar
    elif op == "sub":
        yield ps[0], gbar
        yield ps[1], g.scale(gbar, -1.0)
    elif op == "mul":
        yield ps[0], g.mul(gbar, parent(1))
        yield ps[1], g.mul(gbar, parent(0))
    elif op == "scale":
        yield ps[0], g.scale(gbar, attr)
    elif op == "sum":
        yield ps[0], _broadcast_like(g, gbar, attr, g._shapes[ps[0]])
    elif op == "mean":
        r, c = g._shapes[ps[0]]
        k = r * c if attr is None else (r if attr == 0 else c)
        yield ps[0], g.scale(_broadcast_like(g, gbar, attr, (r, c)), 1.0 / k)
    elif op == "softmax":
        t = g.mul(gbar, self_node)
        row_dot = g.sum(t, axis=1)
        full = g.matmul(row_dot, g.ones(1, g._shapes[i][1]))
        yield ps[0], g.mul(self_node, g.sub(gbar, full))
    elif op == "lrelu":
        yield ps[0], g.mul(gbar, g.leaky_relu_grad(parent(0), attr))
    elif op == "lrelu_grad":
        return  # derivative is zero almost everywhere
    elif op == "sigmoid":
        yield ps[0], g.mul(gbar, g.sub(self_node, g.square(self_node)))
    elif op == "log":
        # d log(x) = 1/x = exp(-log x), and log x is this very node
        yield ps[0], g.mul(gbar, g.exp(g.scale(self_node, -1.0)))
    elif op == "exp":
        yield ps[0], g.mul(gbar, self_node)
    elif op == "square":
        yield ps[0], g.mul(gbar, g.scale(parent(0), 2.0))
    elif op == "sqrt":
        yield ps[0], g.scale(g.mul(gbar, _reciprocal(g, self_node)), 0.5)
    elif op == "l2norm":
        ratio = g.mul(gbar, _reciprocal(g, self_node))
        full = _broadcast_like(g, ratio, attr, g._shapes[ps[0]])
        yield ps[0], g.mul(parent(0), full)
    elif op == "concat_rows":
        n1 = g._shapes[ps[0]][0]
        n = g._shapes[i][0]
        yield ps[0], g.slice_rows(gbar, 0, n1)
        yield ps[1], g.slice_rows(gbar, n1, n)
    elif op == "concat_cols":
        c1 = g._shapes[ps[0]][1]
        c = g._shapes[i][1]
        yield ps[0], g.slice_cols(gbar, 0, c1)
        yield ps[1], g.slice_cols(gbar, c1, c)
    elif op == "slice_rows":
        start, stop = attr
        r, c = g._shapes[ps[0]]
        piece = gbar
        if start > 0:
            piece = g.concat_rows(g.zeros(start, c), piece)
        if stop < r:
            piece = g.concat_rows(piece, g.zeros(r - stop, c))
        yield ps[0], piece
    elif op == "slice_cols":
        start, stop = attr
        r, c = g._shapes[ps[0]]
        piece = gbar
        if start > 0:
            piece = g.concat_cols(g.zeros(r, start), piece)
        if stop < c:
            piece = g.concat_cols(piece, g.zeros(r, c - stop))
        yield ps[0], piece
    elif op == "bcast_rows":
        yield ps[0], g.sum(gbar, axis=0)
    else:  # pragma: no cover
        raise GraphError(f"no symbolic adjoint for op {op!r}", node=i, op=op)


def _symbolic_grad(g: Graph, out_idx: int, wrt_idx: int) -> Node:
    # nodes whose value depends on wrt (single forward pass; parents precede)
    reaches = [False] * len(g._ops)
    reaches[wrt_idx] = True
    for i in range(wrt_idx + 1, len(g._ops)):
        reaches[i] = any(reaches[p] for p in g._parents[i])
    # ancestors of the output
    ancestors = set()
    stack = [out_idx]
    while stack:
        i = stack.pop()
        if i in ancestors:
            continue
        ancestors.add(i)
        stack.extend(g._parents[i])
    if not reaches[out_idx] or wrt_idx not in ancestors:
        return g.zeros(*g._shapes[wrt_idx])
    adj: dict[int, Node] = {out_idx: g.ones(1, 1)}
    for i in sorted(ancestors, reverse=True):
        if i not in adj:
            continue
        if g._ops[i] in ("leaf", "const"):
            continue
        gbar = adj[i]
        for p, contrib in _symbolic_vjp(g, i, gbar):
            if not reaches[p]:
                continue
            if p in adj:
                adj[p] = g.add(adj[p], contrib)
            else:
                adj[p] = contrib
    if wrt_idx not in adj:
        return g.zeros(*g._shapes[wrt_idx])
    return adj[wrt_idx]
