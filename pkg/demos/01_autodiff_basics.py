"""
Reverse-mode autodiff on a numpy tape
=====================================

The whole toolkit sits on a small reverse-mode tape: float64 numpy
arrays wrapped in Tensor nodes, gradients collected by walking the
recorded graph backwards. Physics losses need third derivatives, so
the tape can re-record its own backward pass and differentiate again.
"""

import numpy as np

from spformer import autodiff as ad
from spformer.autodiff import Tensor

# ---------------------------------------------------------------------
# A scalar chain: f(x) = sin(x^2), so f'(x) = 2x cos(x^2).
# Leaves are created with requires_grad=True; everything downstream is
# recorded automatically.

x = Tensor(np.array(0.7), requires_grad=True)
f = ad.sin(ad.square(x))
g = ad.grad(f, [x])[x]
print("f'(0.7)      =", g.item())
print("2x cos(x^2)  =", 2 * 0.7 * np.cos(0.7**2))

# ---------------------------------------------------------------------
# Nesting: ask for the graph of the gradient itself (create_graph=True)
# and differentiate once more. d^2/dx^2 sin(x) = -sin(x).

t = Tensor(np.array(1.3), requires_grad=True)
first = ad.grad(ad.sin(t), [t], create_graph=True)[t]
second = ad.grad(first, [t])[t]
print("sin''(1.3)   =", second.item(), " expected", -np.sin(1.3))

# Third order works the same way; the residual of the streamfunction
# Navier-Stokes form needs it.
u = Tensor(np.array(0.5), requires_grad=True)
d1 = ad.grad(ad.exp(ad.neg(ad.square(u))), [u], create_graph=True)[u]
d2 = ad.grad(d1, [u], create_graph=True)[u]
d3 = ad.grad(d2, [u])[u]
print("third derivative of exp(-u^2) at 0.5:", d3.item())

# ---------------------------------------------------------------------
# Everything broadcasts and matmuls like numpy. A quick finite-difference
# spot check on a random two-layer function of a matrix.

rng = np.random.default_rng(0)
W = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
v = Tensor(rng.normal(size=(3, 2)))
proj = rng.normal(size=(4, 2))

loss = ad.tsum(ad.mul(ad.sin(ad.matmul(W, v)), Tensor(proj)))
gW = ad.grad(loss, [W])[W].data

direction = rng.normal(size=(4, 3))
h = 1e-6
def loss_at(delta):
    out = np.sin((W.data + delta) @ v.data) * proj
    return out.sum()
fd = (loss_at(h * direction) - loss_at(-h * direction)) / (2 * h)
print("analytic dir. derivative:", float((gW * direction).sum()))
print("finite difference:       ", fd)
