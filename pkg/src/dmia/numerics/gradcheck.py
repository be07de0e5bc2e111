"""Finite-difference gradient checking.

Analytic gradients are compared against central differences evaluated on a
float64 shadow copy of the computation (h = 1e-3). Float32 forward noise
would otherwise drown the comparison.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, grad


def check_gradients(
    forward: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, Tensor],
    n_probes: int = 100,
    h: float = 1e-3,
    seed: int = 0,
) -> float:
    """Max relative error between autodiff and central differences.

    ``forward`` must rebuild the loss from the given parameter dict each
    call; parameters are copied to float64 before probing.
    """
    shadow = {k: Tensor(p.data.astype(np.float64), requires_grad=True, dtype=np.float64) for k, p in params.items()}
    loss = forward(shadow)
    analytic = grad(loss, shadow)

    rng = np.random.default_rng(seed)
    flat_coords = [(name, i) for name, p in shadow.items() for i in range(p.size)]
    take = min(n_probes, len(flat_coords))
    picks = rng.choice(len(flat_coords), size=take, replace=False)

    worst = 0.0
    for pick in picks:
        name, i = flat_coords[pick]
        p = shadow[name]
        orig = p.data.flat[i]
        p.data.flat[i] = orig + h
        up = float(forward(shadow).data)
        p.data.flat[i] = orig - h
        down = float(forward(shadow).data)
        p.data.flat[i] = orig
        fd = (up - down) / (2 * h)
        ad = float(analytic[name].data.flat[i])
        rel = abs(ad - fd) / max(abs(fd), abs(ad), 1e-4)
        worst = max(worst, rel)
    return worst
