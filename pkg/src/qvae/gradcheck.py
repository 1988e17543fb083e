"""Central finite differences against the autodiff engine."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """d f / d x by central differences; ``f`` maps an array to a float and may read ``x`` in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat, g = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        g[i] = (up - down) / (2 * h)
    return grad


def rel_error(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / denom)


def check_tensors(loss_fn, tensors, h: float = 1e-6, max_entries=None, seed: int = 0) -> float:
    """Worst relative error between autodiff and finite-difference gradients.

    ``loss_fn()`` must rebuild the graph from the current ``tensors`` data
    and return a scalar Tensor. With ``max_entries`` only a random subset
    of coordinates of each tensor is probed (the error is then taken over
    that subset).
    """
    for t in tensors:
        t.grad = None
    backward(loss_fn())
    auto = [np.array(t.grad, dtype=np.float64) for t in tensors]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, ga in zip(tensors, auto):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        fd = np.empty(idx.size)
        for n, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn().item()
            flat[i] = old - h
            down = loss_fn().item()
            flat[i] = old
            fd[n] = (up - down) / (2 * h)
        worst = max(worst, rel_error(ga.reshape(-1)[idx], fd))
    for t in tensors:
        t.grad = None
    return worst
