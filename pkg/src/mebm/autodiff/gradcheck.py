"""Central finite-difference check of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between autodiff and central-difference gradients.

    ``f`` must return a scalar tensor.  ``x`` is perturbed in place, so ``f``
    may ignore its argument and read ``x`` through a closure (useful for
    model parameters).  The error per coordinate is
    ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    was = x.requires_grad
    saved_grad = x.grad
    x.requires_grad = True
    x.grad = None
    loss = f(x)
    loss.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.astype(np.float64)
    x.grad = saved_grad
    x.requires_grad = was

    numeric = np.empty(x.size, dtype=np.float64)
    flat = x.data.reshape(-1)
    for i in range(x.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x).item()
        flat[i] = orig - eps
        fm = f(x).item()
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * eps)
    a = analytic.reshape(-1)
    err = np.abs(a - numeric) / np.maximum(1e-8, np.abs(a) + np.abs(numeric))
    return float(err.max()) if err.size else 0.0
