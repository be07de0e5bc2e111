"""Forward diffusion, the noise-prediction training loss, and DDIM sampling.

The forward marginal is x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.
Training minimizes the mean squared noise-prediction error over uniformly
drawn steps. Sampling walks a strictly increasing step sub-sequence tau
backwards; each transition predicts x0 from the current noise estimate and
re-noises to the previous step with standard deviation sigma:

    sigma(eta) = eta * sqrt((1-abar_prev)/(1-abar_cur)) * sqrt(1 - abar_cur/abar_prev)
    sigma_hat  = sqrt(1 - abar_cur/abar_prev)

sigma(0) is fully deterministic; sigma_hat exceeds sigma(1) and may exceed
the direction-term radicand, in which case the radicand is clipped at zero
(logged) and the step degenerates to "predict x0, add sigma_hat noise".
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .numerics import RngStream, Tensor, no_grad
from .schedules import NoiseSchedule

log = logging.getLogger(__name__)

VARIANCE_MODES = ("eta", "hat")


@dataclass(frozen=True)
class SamplerSpec:
    """Which steps to sample through and how much noise to re-inject.

    tau is strictly increasing within 1..T; sampling runs from tau[-1] down
    to tau[0] and finally to step 0. variance_mode "eta" uses sigma(eta),
    "hat" uses sigma_hat (eta is ignored).
    """

    schedule: NoiseSchedule
    tau: tuple[int, ...]
    variance_mode: str = "eta"
    eta: float = 0.0

    def __post_init__(self):
        if len(self.tau) == 0:
            raise ContractViolation("tau must be non-empty")
        if any(b <= a for a, b in zip(self.tau, self.tau[1:])):
            raise ContractViolation("tau must be strictly increasing")
        if not (1 <= self.tau[0] and self.tau[-1] <= self.schedule.T):
            raise ContractViolation(f"tau must lie within 1..{self.schedule.T}")
        if self.variance_mode not in VARIANCE_MODES:
            raise ContractViolation(f"variance_mode must be one of {VARIANCE_MODES}")
        if self.eta < 0:
            raise ContractViolation("eta must be >= 0")

    @classmethod
    def uniform(cls, schedule: NoiseSchedule, steps: int, variance_mode: str = "eta", eta: float = 0.0) -> "SamplerSpec":
        """Evenly spaced tau ending at T, e.g. steps=20, T=1000 -> (50, 100, ..., 1000)."""
        if not 1 <= steps <= schedule.T:
            raise ContractViolation(f"steps must be in 1..{schedule.T}")
        if schedule.T % steps != 0:
            raise ContractViolation(f"steps {steps} must divide T={schedule.T} for uniform spacing")
        stride = schedule.T // steps
        return cls(schedule, tuple(range(stride, schedule.T + 1, stride)), variance_mode, eta)


def _alpha_terms(schedule: NoiseSchedule, t) -> tuple[np.ndarray, np.ndarray]:
    abar = schedule.alpha_bars[np.asarray(t)]
    return np.sqrt(abar).astype(np.float32), np.sqrt(1.0 - abar).astype(np.float32)


def diffuse(x0: Tensor, t, eps: Tensor, schedule: NoiseSchedule) -> Tensor:
    """Noise x0 to step t: sqrt(abar_t) x0 + sqrt(1-abar_t) eps.

    t may be an int or a per-example integer array; t=0 returns x0 exactly.
    """
    if x0.shape != eps.shape:
        raise ContractViolation(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    t_arr = np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr > schedule.T):
        raise ContractViolation(f"t must lie in 0..{schedule.T}, got {t}")
    root_abar, root_1m = _alpha_terms(schedule, t_arr)
    if t_arr.ndim == 1:  # per-example coefficients broadcast over trailing dims
        extra = (1,) * (len(x0.shape) - 1)
        root_abar = root_abar.reshape(-1, *extra)
        root_1m = root_1m.reshape(-1, *extra)
    return x0 * Tensor(root_abar, dtype=x0.dtype) + eps * Tensor(root_1m, dtype=x0.dtype)


def simple_loss(net, x0_batch: Tensor, rng: RngStream, schedule: NoiseSchedule) -> Tensor:
    """Mean over the batch of the squared noise-prediction error.

    Draws one step t ~ U{1..T} and one noise tensor per example; the scalar
    per example is the squared L2 norm over all coordinates.
    """
    n = x0_batch.shape[0]
    if n == 0:
        raise ContractViolation("batch must be non-empty")
    t = rng.integers(1, schedule.T + 1, size=n)
    eps = Tensor(rng.normal(x0_batch.shape))
    x_t = diffuse(x0_batch, t, eps, schedule)
    pred = net.predict_eps(x_t, t)
    d = pred - eps
    return (d * d).reshape(n, -1).sum(axis=1).mean()


def sigma_eta(schedule: NoiseSchedule, tau: tuple[int, ...], i: int, eta: float) -> float:
    """Sampling std at transition i (tau[i] -> tau[i-1], tau[-1 of range] -> 0)."""
    abar_cur, abar_prev = _transition_abars(schedule, tau, i)
    return eta * math.sqrt((1.0 - abar_prev) / (1.0 - abar_cur)) * math.sqrt(1.0 - abar_cur / abar_prev)


def sigma_hat(schedule: NoiseSchedule, tau: tuple[int, ...], i: int) -> float:
    """The larger sampling std sqrt(1 - abar_cur/abar_prev)."""
    abar_cur, abar_prev = _transition_abars(schedule, tau, i)
    return math.sqrt(1.0 - abar_cur / abar_prev)


def _transition_abars(schedule: NoiseSchedule, tau: tuple[int, ...], i: int) -> tuple[float, float]:
    if not 0 <= i < len(tau):
        raise ContractViolation(f"transition index {i} outside 0..{len(tau) - 1}")
    prev_t = tau[i - 1] if i > 0 else 0
    return schedule.alpha_bar(tau[i]), schedule.alpha_bar(prev_t)


def sigma_for(spec: SamplerSpec, i: int) -> float:
    if spec.variance_mode == "hat":
        return sigma_hat(spec.schedule, spec.tau, i)
    return sigma_eta(spec.schedule, spec.tau, i, spec.eta)


def _resolve_radicand(schedule: NoiseSchedule, to_t: int, sigma: float, clip: bool) -> float:
    radicand = 1.0 - schedule.alpha_bar(to_t) - sigma * sigma
    if radicand < 0:
        if not clip:
            raise ContractViolation(
                f"sigma={sigma:.6g} exceeds sqrt(1 - alpha_bar_{to_t})={math.sqrt(1.0 - schedule.alpha_bar(to_t)):.6g}"
            )
        log.info("clipping direction radicand at 0: sigma=%.4g, to_t=%d", sigma, to_t)
        radicand = 0.0
    return radicand


def _ddim_update(
    x_t: np.ndarray, eps_hat: np.ndarray, abar_from: float, abar_to: float, radicand: float
) -> np.ndarray:
    """sqrt(abar_to) * x0_hat + sqrt(radicand) * eps_hat (noise term added by callers)."""
    x0_hat = (x_t - np.float32(math.sqrt(1.0 - abar_from)) * eps_hat) * np.float32(1.0 / math.sqrt(abar_from))
    return np.float32(math.sqrt(abar_to)) * x0_hat + np.float32(math.sqrt(radicand)) * eps_hat


def ddim_step(
    net,
    x_t: Tensor,
    from_t: int,
    to_t: int,
    sigma: float,
    rng: RngStream,
    schedule: NoiseSchedule,
    clip_radicand: bool = False,
) -> Tensor:
    """One reverse transition from step from_t to step to_t.

    Predicts x0 from the current noise estimate, then forms
    sqrt(abar_to) x0_hat + sqrt(1 - abar_to - sigma^2) eps_hat + sigma eps_new.
    With sigma = 0 no randomness is consumed. A negative radicand is a
    contract violation unless clip_radicand, which clips it at 0 and logs.
    """
    if not (schedule.T >= from_t > to_t >= 0):
        raise ContractViolation(f"need T >= from_t > to_t >= 0, got from_t={from_t}, to_t={to_t}")
    if sigma < 0:
        raise ContractViolation(f"sigma must be >= 0, got {sigma}")
    radicand = _resolve_radicand(schedule, to_t, sigma, clip_radicand)
    with no_grad():
        eps_hat = net.predict_eps(x_t, from_t).data
    out = _ddim_update(x_t.data, eps_hat, schedule.alpha_bar(from_t), schedule.alpha_bar(to_t), radicand)
    if sigma > 0:
        out = out + np.float32(sigma) * rng.normal(x_t.shape)
    return Tensor(out)


def sample(net, spec: SamplerSpec, n: int, rng: RngStream, batch_size: int = 128) -> Tensor:
    """Draw n samples by iterating the reverse transitions down tau.

    Starts from pure noise at tau[-1], finishes at step 0, and clips the
    result to the data range [-1, 1]. Noise draws are independent of the
    internal batch chunking, so the output depends only on (spec, n, rng).
    """
    if n < 1:
        raise ContractViolation(f"need n >= 1, got {n}")
    shape = (n, *net.input_shape)
    x = rng.normal(shape)
    with no_grad():
        for i in reversed(range(len(spec.tau))):
            from_t = spec.tau[i]
            to_t = spec.tau[i - 1] if i > 0 else 0
            sigma = sigma_for(spec, i)
            radicand = _resolve_radicand(spec.schedule, to_t, sigma, clip=spec.variance_mode == "hat")
            step_noise = rng.normal(shape) if sigma > 0 else None
            abar_from = spec.schedule.alpha_bar(from_t)
            abar_to = spec.schedule.alpha_bar(to_t)
            nxt = np.empty_like(x)
            for lo in range(0, n, batch_size):
                hi = min(lo + batch_size, n)
                eps_hat = net.predict_eps(Tensor(x[lo:hi]), from_t).data
                step = _ddim_update(x[lo:hi], eps_hat, abar_from, abar_to, radicand)
                if step_noise is not None:
                    step = step + np.float32(sigma) * step_noise[lo:hi]
                nxt[lo:hi] = step
            x = nxt
    return Tensor(np.clip(x, -1.0, 1.0))
