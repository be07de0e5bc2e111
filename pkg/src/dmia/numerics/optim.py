"""Adam optimizer over named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation, NumericFailure
from .tensor import Tensor


@dataclass
class AdamState:
    """Optimizer state: step count plus per-parameter moment estimates."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_state(params: dict[str, Tensor], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(state: AdamState, params: dict[str, Tensor], grads: dict[str, Tensor]) -> tuple[dict[str, Tensor], AdamState]:
    """One Adam update, in place on the parameter tensors.

    Deterministic given inputs; raises NumericFailure on NaN gradients.
    """
    state.step += 1
    b1 = np.float32(state.beta1)
    b2 = np.float32(state.beta2)
    lr_t = np.float32(state.lr * np.sqrt(1.0 - state.beta2**state.step) / (1.0 - state.beta1**state.step))
    eps = np.float32(state.eps)
    for name, p in params.items():
        g = grads[name].data if isinstance(grads[name], Tensor) else np.asarray(grads[name])
        if g.shape != p.data.shape:
            raise ContractViolation(f"gradient shape {g.shape} != parameter shape {p.data.shape} for '{name}'")
        if np.isnan(g).any():
            raise NumericFailure(f"NaN gradient for parameter '{name}'", op="adam_step")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (np.float32(1) - b1) * g
        v *= b2
        v += (np.float32(1) - b2) * (g * g)
        p.data -= lr_t * m / (np.sqrt(v) + eps)
    return params, state
