"""Training loops that produce the target models for the attack game.

Both loops shuffle members each epoch (keeping the final partial batch),
run Adam, log per-epoch mean losses, and invoke a checkpoint callback at a
fixed cadence (every max(1, epochs // 10) epochs plus the final epoch, or at
explicitly requested epochs). A NaN loss aborts the run with a numeric
failure; checkpoints already emitted stay on disk.

Randomness is drawn from three child streams of the training seed ("init",
"shuffle", "loss"/"latent"), so runs are bit-reproducible and distinct
components never share draws.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import DatasetSplit
from .diffusion import simple_loss
from .errors import ContractViolation, NumericFailure
from .harness.config import ExperimentConfig
from .models import DenoiserNet, GanPair
from .numerics import RngStream, Tensor, adam_state, adam_step, grad, softplus
from .schedules import make_schedule

log = logging.getLogger(__name__)

CheckpointFn = Callable[[int, object], None]


@dataclass
class TrainingLog:
    """Per-epoch scalar series; column order matches the CSV layout."""

    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)

    def add(self, *row):
        self.rows.append(tuple(row))

    def to_csv(self) -> str:
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(_fmt(v) for v in row))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    return f"{v:.10g}" if isinstance(v, float) else str(v)


def epoch_budget(training_size: int, reference_size: int, reference_epochs: int) -> int:
    """Epochs that keep training_size * epochs ~ reference_size * reference_epochs."""
    if training_size <= 0 or reference_size <= 0 or reference_epochs <= 0:
        raise ContractViolation("epoch_budget needs positive sizes and epochs")
    return round(reference_epochs * reference_size / training_size)


def resolve_epochs(cfg: ExperimentConfig) -> int:
    if cfg.epochs > 0:
        return cfg.epochs
    return epoch_budget(cfg.train_size, cfg.ref_size, cfg.ref_epochs)


def checkpoint_epochs(total: int, requested: tuple[int, ...] | None = None) -> list[int]:
    if requested:
        marks = sorted(set(int(e) for e in requested) | {total})
        return [e for e in marks if 1 <= e <= total]
    cadence = max(1, total // 10)
    return sorted(set(range(cadence, total + 1, cadence)) | {total})


def _arch_for(cfg: ExperimentConfig, data_shape: tuple[int, ...]) -> str:
    if cfg.arch != "auto":
        return cfg.arch
    return "small_unet" if len(data_shape) == 3 else "mlp"


def _batches(n: int, batch_size: int, order: np.ndarray):
    for lo in range(0, n, batch_size):
        yield order[lo : lo + batch_size]


def train_diffusion(
    cfg: ExperimentConfig,
    split: DatasetSplit,
    on_checkpoint: CheckpointFn | None = None,
    checkpoint_at: tuple[int, ...] | None = None,
) -> tuple[DenoiserNet, TrainingLog]:
    """Train the noise predictor on the split's members."""
    members = split.members
    if len(members) == 0:
        raise ContractViolation("member set must be non-empty")
    epochs = resolve_epochs(cfg)
    schedule = make_schedule(cfg.schedule, cfg.T)
    base = RngStream(cfg.seed_train)
    net = DenoiserNet.build(_arch_for(cfg, members.shape[1:]), members.shape[1:], base.split("init"))
    state = adam_state(net.parameters(), lr=cfg.effective_lr())
    shuffle = base.split("shuffle")
    loss_rng = base.split("loss")
    marks = set(checkpoint_epochs(epochs, checkpoint_at))
    tlog = TrainingLog(("epoch", "mean_loss"))

    for epoch in range(1, epochs + 1):
        order = shuffle.permutation(len(members))
        epoch_losses = []
        for batch_idx in _batches(len(members), cfg.batch_size, order):
            loss = simple_loss(net, Tensor(members[batch_idx]), loss_rng, schedule)
            value = float(loss.data)
            if np.isnan(value):
                raise NumericFailure(f"NaN training loss at epoch {epoch}; last checkpoints retained", op="train_diffusion")
            grads = grad(loss, net.parameters())
            adam_step(state, net.parameters(), grads)
            epoch_losses.append(value)
        tlog.add(epoch, float(np.mean(epoch_losses)))
        if epoch in marks and on_checkpoint is not None:
            on_checkpoint(epoch, net)
    log.info("trained ddim on %d members for %d epochs; final loss %.5f", len(members), epochs, tlog.rows[-1][1])
    return net, tlog


def train_gan(
    cfg: ExperimentConfig,
    split: DatasetSplit,
    on_checkpoint: CheckpointFn | None = None,
    checkpoint_at: tuple[int, ...] | None = None,
) -> tuple[GanPair, TrainingLog]:
    """Alternating one-step discriminator/generator updates per minibatch."""
    members = split.members
    if len(members) == 0:
        raise ContractViolation("member set must be non-empty")
    epochs = resolve_epochs(cfg)
    base = RngStream(cfg.seed_train)
    pair = GanPair.build(members.shape[1:], base.split("init"), latent_dim=cfg.latent_dim)
    lr = cfg.effective_lr()
    d_params = pair.discriminator_parameters()
    g_params = pair.generator_parameters()
    d_state = adam_state(d_params, lr=lr, beta1=0.5)
    g_state = adam_state(g_params, lr=lr, beta1=0.5)
    shuffle = base.split("shuffle")
    latent = base.split("latent")
    marks = set(checkpoint_epochs(epochs, checkpoint_at))
    tlog = TrainingLog(("epoch", "d_loss", "g_loss"))

    for epoch in range(1, epochs + 1):
        order = shuffle.permutation(len(members))
        d_losses, g_losses = [], []
        for batch_idx in _batches(len(members), cfg.batch_size, order):
            real = Tensor(members[batch_idx])
            m = len(batch_idx)
            z = Tensor(latent.normal((m, cfg.latent_dim)))
            fake = pair.generate(z).detach()
            d_loss = softplus(-pair.discriminate(real)).mean() + softplus(pair.discriminate(fake)).mean()
            d_val = float(d_loss.data)
            if np.isnan(d_val):
                raise NumericFailure(f"NaN discriminator loss at epoch {epoch}", op="train_gan")
            adam_step(d_state, d_params, grad(d_loss, d_params))
            z2 = Tensor(latent.normal((m, cfg.latent_dim)))
            g_loss = softplus(-pair.discriminate(pair.generate(z2))).mean()
            g_val = float(g_loss.data)
            if np.isnan(g_val):
                raise NumericFailure(f"NaN generator loss at epoch {epoch}", op="train_gan")
            adam_step(g_state, g_params, grad(g_loss, g_params))
            d_losses.append(d_val)
            g_losses.append(g_val)
        tlog.add(epoch, float(np.mean(d_losses)), float(np.mean(g_losses)))
        if epoch in marks and on_checkpoint is not None:
            on_checkpoint(epoch, pair)
    log.info("trained gan on %d members for %d epochs", len(members), epochs)
    return pair, tlog
