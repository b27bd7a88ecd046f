"""Walk through the reverse-mode tape and its finite-difference oracle.

Builds a tiny two-layer computation by hand, runs backward, and checks
every gradient against central differences of an independent float64
forward pass. This is the same validation pattern the test suite runs
on every operator.
"""

import numpy as np

from fedswarm import Graph, Tensor, finite_diff_grad

rng = np.random.default_rng(17)

w = rng.standard_normal((3, 4)).astype(np.float32)
x = rng.standard_normal((4, 1)).astype(np.float32)
b = rng.standard_normal((3, 1)).astype(np.float32)
u = rng.standard_normal((1, 3)).astype(np.float32)

# forward, taped: loss = u @ relu(w @ x + b)
g = Graph()
w_id = g.leaf(w)
h_id = g.relu(g.add(g.matmul(w_id, g.leaf(x)), g.leaf(b)))
loss_id = g.matmul(g.leaf(u), h_id)

loss = float(g.raw_value(loss_id).reshape(()))
print(f"taped loss           : {loss:.6f}")

g.backward(loss_id)
dw = g.grad(w_id)

# the oracle: same math in float64, differentiated numerically
def f64_loss(wt: Tensor) -> float:
    h = np.maximum(wt.array.astype(np.float64) @ x.astype(np.float64) + b, 0.0)
    return float((u.astype(np.float64) @ h).reshape(()))

# the loss is piecewise linear in w and a power-of-two step is an
# exact float32 perturbation, so central differences are exact here
fd = finite_diff_grad(f64_loss, Tensor(w), 2.0**-10)
err = np.abs(dw.data - fd.data).max()
print(f"analytic dLoss/dw[0] : {dw.array[0]}")
print(f"numeric  dLoss/dw[0] : {fd.array[0]}")
print(f"max abs disagreement : {err:.2e}")
assert err < 1e-6
print("backward rules agree with the float64 oracle")
