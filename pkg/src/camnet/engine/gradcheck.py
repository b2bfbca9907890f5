"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from camnet.engine.tensor import backward


def grad_check(f, params, eps: float = 1e-5, max_coords: int = 20, seed: int = 0) -> float:
    """Largest relative error between backprop and central differences.

    ``f`` rebuilds the graph from the current parameter values and returns a
    scalar tensor. Up to ``max_coords`` coordinates per parameter are probed;
    each comparison uses |a - n| / max(1e-8, |a| + |n|).
    """
    params = list(params)
    for p in params:
        p.grad = None
    backward(f(), params)
    analytic = [p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            up = f().item()
            flat[c] = orig - eps
            down = f().item()
            flat[c] = orig
            numeric = (up - down) / (2.0 * eps)
            a = float(grad.reshape(-1)[c])
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
