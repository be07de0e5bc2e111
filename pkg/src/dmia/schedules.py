"""Noise schedules: per-step noise rates and their running signal products.

A schedule holds beta_1..beta_T and the cumulative products
abar_t = prod_{s<=t}(1 - beta_s), stored for t = 0..T with abar_0 = 1 so the
sampler's "previous step is 0" case needs no special handling.

Two variants:
  * linear - beta interpolates 1e-4 -> 0.02 (scaled by 1000/T for other T,
    so total noise injected is comparable at any step count).
  * cosine - abar follows the squared-cosine curve with offset s = 0.008;
    betas are recovered from adjacent ratios and clipped at 0.999, and the
    stored products are recomputed from the clipped betas so the
    product/β consistency is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

LINEAR_BETA_START = 1e-4
LINEAR_BETA_END = 0.02
COSINE_OFFSET = 0.008
BETA_CLIP = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable noise schedule.

    Attributes:
        kind: "linear" or "cosine".
        T: number of diffusion steps.
        betas: shape (T,), betas[t-1] is the rate at step t, each in (0, 1).
        alpha_bars: shape (T+1,), alpha_bars[t] is the signal product at
            step t; alpha_bars[0] == 1.
    """

    kind: str
    T: int
    betas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(repr=False)

    def beta(self, t: int) -> float:
        if not 1 <= t <= self.T:
            raise ContractViolation(f"beta defined for t in 1..{self.T}, got {t}")
        return float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ContractViolation(f"alpha_bar defined for t in 0..{self.T}, got {t}")
        return float(self.alpha_bars[t])


def _validate(s: NoiseSchedule) -> NoiseSchedule:
    if not (np.all(s.betas > 0) and np.all(s.betas < 1)):
        raise ContractViolation("betas must lie in (0, 1)")
    if s.alpha_bars[0] != 1.0:
        raise ContractViolation("alpha_bar at t=0 must be 1")
    if not np.all(np.diff(s.alpha_bars) < 0):
        raise ContractViolation("alpha_bar must be strictly decreasing")
    if s.alpha_bars[-1] >= 0.01:
        raise ContractViolation(f"alpha_bar at t=T must fall below 0.01, got {s.alpha_bars[-1]:.4f}")
    recomputed = np.cumprod(1.0 - s.betas)
    rel = np.abs(recomputed - s.alpha_bars[1:]) / recomputed
    if rel.max() > 1e-6:
        raise ContractViolation("stored alpha_bars inconsistent with betas")
    return s


def linear_schedule(T: int) -> NoiseSchedule:
    """Linearly spaced betas, endpoints 1e-4 and 0.02 at T=1000.

    For other T the endpoints scale by 1000/T (clipped below 1) so the
    schedule still drives the signal product to ~0 by step T.
    """
    if T < 2:
        raise ContractViolation(f"linear_schedule needs T >= 2, got {T}")
    scale = 1000.0 / T
    betas = np.linspace(scale * LINEAR_BETA_START, scale * LINEAR_BETA_END, T, dtype=np.float64)
    betas = np.clip(betas, None, BETA_CLIP)
    alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return _validate(NoiseSchedule("linear", T, betas, alpha_bars))


def cosine_schedule(T: int) -> NoiseSchedule:
    """Squared-cosine signal curve with offset 0.008; betas clipped at 0.999."""
    if T < 2:
        raise ContractViolation(f"cosine_schedule needs T >= 2, got {T}")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos((t / T + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * np.pi / 2.0) ** 2
    abar = f / f[0]
    betas = np.clip(1.0 - abar[1:] / abar[:-1], None, BETA_CLIP)
    alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return _validate(NoiseSchedule("cosine", T, betas, alpha_bars))


def make_schedule(kind: str, T: int) -> NoiseSchedule:
    if kind == "linear":
        return linear_schedule(T)
    if kind == "cosine":
        return cosine_schedule(T)
    raise ContractViolation(f"unknown schedule kind '{kind}'")


def t_for_alpha_bar(schedule: NoiseSchedule, target: float) -> int:
    """The step whose signal product is closest to ``target`` (smallest on ties)."""
    if not schedule.alpha_bars[-1] < target < schedule.alpha_bars[0]:
        raise ContractViolation(
            f"target {target} outside ({schedule.alpha_bars[-1]:.3g}, {schedule.alpha_bars[0]:.3g})"
        )
    return int(np.argmin(np.abs(schedule.alpha_bars - target)))
