from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, eps: float = 1e-6,
                 indices: Sequence[int] | None = None) -> np.ndarray:
    """Central finite differences of the scalar ``fn()`` w.r.t. ``t``.

    ``indices`` restricts the probe to flat positions; other entries stay 0.
    """
    flat = t.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    probe = range(flat.size) if indices is None else indices
    for i in probe:
        old = flat[i]
        flat[i] = old + eps
        hi = float(fn().data)
        flat[i] = old - eps
        lo = float(fn().data)
        flat[i] = old
        out[i] = (hi - lo) / (2 * eps)
    return out.reshape(t.shape)


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-6,
                    max_probes: int | None = None, seed: int = 0) -> float:
    """Worst relative error between autograd and finite differences over ``inputs``."""
    for t in inputs:
        t.grad = None
    fn().backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in inputs:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64)
        idx = None
        if max_probes is not None and t.size > max_probes:
            idx = np.sort(rng.choice(t.size, size=max_probes, replace=False))
        numeric = numeric_grad(fn, t, eps, idx)
        if idx is not None:
            analytic = analytic.reshape(-1)[idx]
            numeric = numeric.reshape(-1)[idx]
        worst = max(worst, rel_error(analytic, numeric))
    return worst
