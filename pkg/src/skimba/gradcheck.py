"""Central finite-difference checks for the differentiation contract."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, eps: float = 1e-5,
                   indices: Sequence[int] | None = None) -> np.ndarray:
    """d fn() / d x by central differences, optionally only at the given flat indices."""
    flat = x.data.reshape(-1)
    grad = np.zeros_like(flat, dtype=np.float64)
    for i in (range(flat.size) if indices is None else indices):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(fn().data.sum())
        flat[i] = orig - eps
        down = float(fn().data.sum())
        flat[i] = orig
        grad[i] = (up - down) / (2 * eps)
    return grad.reshape(x.shape)


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6, rtol: float = 1e-4) -> float:
    """Worst element-wise relative error with an absolute floor.

    The denominator never drops below ``floor / rtol``, so a result below ``rtol``
    means every entry satisfies ``|a - n| < max(rtol * max(|a|, |n|), floor)``.
    """
    if not analytic.size:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor / rtol)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
                    max_entries: int | None = 24, seed: int = 0, floor: float = 1e-6) -> float:
    """Compare backward() against central differences for every input; returns the worst relative error.

    ``fn`` must rebuild the graph on each call (so perturbations are seen) and
    return a scalar or a tensor whose sum is the checked objective. Inputs
    should be float64. With ``max_entries`` only a random subset of each input
    is probed numerically.
    """
    for x in inputs:
        x.grad = None
    out = fn()
    out.sum().backward() if out.size != 1 else out.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for x in inputs:
        analytic = np.zeros(x.shape) if x.grad is None else x.grad.astype(np.float64)
        n = x.size
        idx = None if max_entries is None or n <= max_entries else rng.choice(n, max_entries, replace=False)
        numeric = numerical_grad(fn, x, eps, idx)
        if idx is None:
            err = max_rel_error(analytic, numeric, floor)
        else:
            err = max_rel_error(analytic.reshape(-1)[idx], numeric.reshape(-1)[idx], floor)
        worst = max(worst, err)
    return worst
