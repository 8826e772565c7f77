"""Central finite-difference verification of reverse-mode gradients.

All checks run in float64; float32 round-off swamps the O(h^2) truncation
error of the central stencil.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


def finite_difference_grad(f, x, h=1e-6):
    """Central-difference gradient of scalar-valued ``f`` at array ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def check_gradients(f, inputs, h=1e-6, rtol=1e-6):
    """Compare reverse-mode and finite-difference gradients of ``f``.

    ``f`` maps a tuple of Tensors to a scalar Tensor.  ``inputs`` is a list
    of float64 arrays; every one is treated as differentiable.  Returns the
    worst relative error over all inputs.
    """
    tensors = [Tensor(np.asarray(x, dtype=np.float64).copy(), requires_grad=True)
               for x in inputs]
    out = f(*tensors)
    out.backward()

    worst = 0.0
    for k, t in enumerate(tensors):
        def f_k(xk, k=k):
            args = [Tensor(t2.data) for t2 in tensors]
            args[k] = Tensor(np.asarray(xk, dtype=np.float64))
            return f(*args).item()

        num = finite_difference_grad(f_k, t.data, h=h)
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        denom = max(np.linalg.norm(num), np.linalg.norm(ana), 1e-8)
        err = np.linalg.norm(ana - num) / denom
        worst = max(worst, float(err))
    if worst >= rtol:
        raise AssertionError(f"gradient check failed: relative error {worst:.3e} "
                             f">= tolerance {rtol:.1e}")
    return worst
