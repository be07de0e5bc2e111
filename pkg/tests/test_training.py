import numpy as np
import pytest

from dmia.data import make_split, synth_dataset
from dmia.errors import ContractViolation
from dmia.harness.config import ExperimentConfig
from dmia.training import epoch_budget, train_diffusion, train_gan


def two_moons(n, seed):
    """Interleaved half circles scaled into [-1, 1]."""
    g = np.random.default_rng(seed)
    half = n // 2
    theta = g.uniform(0, np.pi, size=half)
    upper = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    lower = np.stack([1 - np.cos(theta), -np.sin(theta) + 0.5], axis=1)
    pts = np.concatenate([upper, lower]) * 0.6
    pts += g.normal(scale=0.03, size=pts.shape)
    return np.clip(pts, -1, 1).astype(np.float32)[g.permutation(n)]


def mini_cfg(**kw):
    base = dict(
        dataset="unused", model="ddim", schedule="cosine", T=1000, train_size=8,
        epochs=1, batch_size=8, eval_count=1, seed_data=1, seed_train=2, seed_attack=3,
    )
    base.update(kw)
    return ExperimentConfig(**base)


class TestEpochBudget:
    def test_paper_scale_values(self):
        assert epoch_budget(600, 12000, 500) == 10000
        assert epoch_budget(12000, 12000, 500) == 500
        assert epoch_budget(6000, 12000, 500) == 1000

    def test_zero_size_rejected(self):
        with pytest.raises(ContractViolation):
            epoch_budget(0, 12000, 500)

    def test_image_count_alignment(self):
        ref_size, ref_epochs = 2400, 24
        for size in (600, 1200, 2400, 4800, 9600):
            budget = epoch_budget(size, ref_size, ref_epochs)
            assert abs(size * budget - ref_size * ref_epochs) <= size / 2 + 1


class TestTrainDiffusion:
    def test_smoke_one_epoch(self):
        data = synth_dataset("gaussians", 10, dims=2, seed=0)
        split = make_split(data, 8, 2, seed=1)
        net, tlog = train_diffusion(mini_cfg(), split)
        assert len(tlog.rows) == 1
        assert np.isfinite(tlog.rows[0][1])

    def test_two_moons_loss_halves(self):
        data = two_moons(64, seed=3)
        split = make_split(data, 56, 8, seed=1)
        cfg = mini_cfg(train_size=56, epochs=2000, batch_size=64, lr=1e-3)
        net, tlog = train_diffusion(cfg, split)
        first = np.mean([r[1] for r in tlog.rows[:20]])
        last = np.mean([r[1] for r in tlog.rows[-20:]])
        assert last < first / 2

    def test_determinism(self):
        data = synth_dataset("gaussians", 16, dims=2, seed=0)
        split = make_split(data, 12, 4, seed=1)
        cfg = mini_cfg(train_size=12, epochs=3, batch_size=4)
        net_a, log_a = train_diffusion(cfg, split)
        net_b, log_b = train_diffusion(cfg, split)
        assert log_a.rows == log_b.rows
        for name in net_a.params:
            np.testing.assert_array_equal(net_a.params[name].data, net_b.params[name].data)

    def test_checkpoint_cadence(self):
        data = synth_dataset("gaussians", 16, dims=2, seed=0)
        split = make_split(data, 12, 4, seed=1)
        seen = []
        train_diffusion(mini_cfg(train_size=12, epochs=20, batch_size=12), split, on_checkpoint=lambda e, _: seen.append(e))
        assert seen == [2, 4, 6, 8, 10, 12, 14, 16, 18, 20]

    def test_requested_checkpoints(self):
        data = synth_dataset("gaussians", 16, dims=2, seed=0)
        split = make_split(data, 12, 4, seed=1)
        seen = []
        train_diffusion(
            mini_cfg(train_size=12, epochs=7, batch_size=12),
            split,
            on_checkpoint=lambda e, _: seen.append(e),
            checkpoint_at=(2, 5),
        )
        assert seen == [2, 5, 7]


class TestTrainGan:
    def test_smoke_one_epoch(self):
        data = synth_dataset("gaussians", 10, dims=2, seed=0)
        split = make_split(data, 8, 2, seed=1)
        pair, tlog = train_gan(mini_cfg(model="gan", latent_dim=8), split)
        assert np.isfinite(tlog.rows[0][1]) and np.isfinite(tlog.rows[0][2])

    def test_moment_matching_on_gaussian_blob(self):
        g = np.random.default_rng(5)
        data = np.clip(g.normal(loc=(0.4, -0.3), scale=0.15, size=(140, 2)), -1, 1).astype(np.float32)
        split = make_split(data, 128, 8, seed=2)
        cfg = mini_cfg(model="gan", train_size=128, epochs=150, batch_size=64, latent_dim=16, lr=2e-3)
        pair, _ = train_gan(cfg, split)
        from dmia.numerics import RngStream, Tensor

        z = Tensor(RngStream(9).normal((400, 16)))
        gen = pair.generate(z).data
        assert np.linalg.norm(gen.mean(axis=0) - data.mean(axis=0)) < 0.5

    def test_determinism(self):
        data = synth_dataset("gaussians", 16, dims=2, seed=0)
        split = make_split(data, 12, 4, seed=1)
        cfg = mini_cfg(model="gan", train_size=12, epochs=3, batch_size=4, latent_dim=8)
        a, log_a = train_gan(cfg, split)
        b, log_b = train_gan(cfg, split)
        assert log_a.rows == log_b.rows
        for name in a.params:
            np.testing.assert_array_equal(a.params[name].data, b.params[name].data)
