"""
Reverse-mode differentiation on 2-D graphs
==========================================

Build a small computation as an explicit node list, read every gradient
from one backward sweep, then differentiate the gradient itself.
"""

import numpy as np

from mlzgen import diffmath as dm

# every tensor is a strictly 2-D float64 matrix; leaves are named inputs
g = dm.Graph()
x = g.leaf("x", (2, 3))
w = g.leaf("w", (3, 2))
loss = g.mean(g.square(g.sigmoid(g.matmul(x, w))))
g.set_output(loss)

rng = np.random.default_rng(0)
bindings = {"x": rng.normal(size=(2, 3)), "w": rng.normal(size=(3, 2))}
print("loss:", float(dm.evaluate(g, bindings)[0, 0]))

# one numeric sweep fills in the gradient of every leaf at once
grads = dm.backward(g)
print("dL/dw:")
print(grads["w"])

# finite differences agree entry by entry
h = 1e-6
fd = np.zeros_like(bindings["w"])
for i, j in np.ndindex(3, 2):
    up, dn = bindings["w"].copy(), bindings["w"].copy()
    up[i, j] += h
    dn[i, j] -= h
    hi = dm.evaluate(g, {**bindings, "w": up}, output=loss)[0, 0]
    lo = dm.evaluate(g, {**bindings, "w": dn}, output=loss)[0, 0]
    fd[i, j] = (hi - lo) / (2 * h)
print("max |analytic - finite difference|:", np.abs(fd - grads["w"]).max())

# gradients are also available as graph nodes, so they stay differentiable:
# grad() appends the adjoint of w, and a second sweep differentiates through it
gw = g.grad(loss, w)
gw_sq = g.sum(g.square(gw))
dm.evaluate(g, bindings)
curvature = dm.backward(g, output=gw_sq)["w"]
print("d ||dL/dw||^2 / dw (second order):")
print(curvature)
