"""Walk through the numpy autodiff: a small conv net, its gradients, and the finite-difference suite.

Run: python demos/01_autodiff.py
"""

import numpy as np

from mebm import autodiff as ad
from mebm.autodiff import Tensor, finite_diff_check
from mebm.checks import format_results, run_gradcheck

g = np.random.default_rng(0)

# A dilated depthwise conv, GELU, attention-style softmax over time, then sum pooling.
x = Tensor(g.standard_normal((2, 4, 12)), requires_grad=True)
w = Tensor(0.3 * g.standard_normal((4, 1, 3)), requires_grad=True)
h = ad.gelu(ad.conv1d(x, w, dilation=2, groups=4))
a = ad.softmax(h, axis=2)
loss = ad.sum(ad.mul(a, h))
loss.backward()
print(f"loss {loss.item():.6f}")
print(f"dL/dw shape {w.grad.shape}, norm {np.linalg.norm(w.grad):.4f}")

# Compare the conv weight gradient with central differences.
def f(_):
    return ad.sum(ad.mul(ad.softmax(ad.gelu(ad.conv1d(x, w, dilation=2, groups=4)), axis=2),
                         ad.gelu(ad.conv1d(x, w, dilation=2, groups=4))))

print(f"max relative error on w: {finite_diff_check(f, w):.2e}")

# The full suite: every op plus a tiny end-to-end model, all in float64.
print()
print(format_results(run_gradcheck()))
