"""Shared test utilities: central finite differences against backward()."""

from __future__ import annotations

import numpy as np

from pertvi import tensor as T


def numeric_grad(f, arrays, eps: float = 1e-6) -> list[np.ndarray]:
    """Central differences of the scalar ``f()`` w.r.t. each array (in place)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + eps
            hi = float(f())
            a[i] = old - eps
            lo = float(f())
            a[i] = old
            g[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def grad_check(build, tensors, eps: float = 1e-6) -> float:
    """Worst relative error between backward() and central differences.

    ``build()`` must rebuild the scalar graph from ``tensors`` (Tensor objects
    with requires_grad) and be deterministic. The relative error of each
    tensor is max|analytic - numeric| / max(max|numeric|, 1e-8).
    """
    for t in tensors:
        t.grad = None if not isinstance(t, T.Parameter) else np.zeros_like(t.data)
    out = build()
    T.backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    def f():
        with T.no_grad():
            return build().data

    numeric = numeric_grad(f, [t.data for t in tensors], eps)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        worst = max(worst, float(np.max(np.abs(a - n)) / max(float(np.max(np.abs(n))), 1e-8)))
    return worst


def module_grad_check(module, loss_fn, eps: float = 1e-6) -> dict[str, float]:
    """Relative error per parameter of ``loss_fn()`` (a scalar Tensor)."""
    params = list(module.named_parameters())
    for _, p in params:
        p.grad = np.zeros_like(p.data)
    T.backward(loss_fn())
    analytic = {n: p.grad.copy() for n, p in params}

    def f():
        with T.no_grad():
            return loss_fn().data

    out = {}
    for n, p in params:
        num = numeric_grad(f, [p.data], eps)[0]
        scale = max(float(np.max(np.abs(num))), float(np.max(np.abs(analytic[n]))))
        out[n] = 0.0 if scale < 1e-10 else float(np.max(np.abs(analytic[n] - num)) / max(scale, 1e-8))
    return out
