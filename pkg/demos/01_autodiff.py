"""
Reverse-mode autodiff on float64 arrays
=======================================

Build a small graph, backpropagate, and compare against finite differences.
"""

import numpy as np

from atlas_avs import tensor as T
from atlas_avs.checks import run_gradcheck_suite
from atlas_avs.gradcheck import check_gradients
from atlas_avs.tensor import Tensor

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)

# a softmax over a matmul, reduced to a scalar
loss = (T.softmax(x @ w, axis=-1) * np.arange(2.0)).sum()
loss.backward()
print("loss", loss.item())
print("dL/dw\n", w.grad)

# the same gradient from central differences
for r in check_gradients(lambda: (T.softmax(x @ w, axis=-1) * np.arange(2.0)).sum(),
                         [("x", x), ("w", w)]):
    print(f"{r.name}: max rel err {r.max_rel_error:.1e}")

# every parameterized block of the model, over a few seeds
for r in run_gradcheck_suite(n_seeds=3):
    print(f"{'PASS' if r.passed else 'FAIL'} {r.name:18s} {r.max_rel_error:.1e}")
