import numpy as np
import pytest

import dmia.numerics as N
from dmia.errors import ContractViolation
from dmia.models import DenoiserNet, GanPair, discriminate, generate
from dmia.numerics import RngStream, Tensor


class TestDenoiser:
    @pytest.mark.parametrize("arch,shape", [("mlp", (6,)), ("small_unet", (1, 8, 8))])
    def test_fresh_net_outputs_zero(self, arch, shape):
        net = DenoiserNet.build(arch, shape, RngStream(1))
        x = Tensor(np.random.default_rng(0).normal(size=(3, *shape)).astype(np.float32))
        out = net.predict_eps(x, 17)
        assert out.shape == x.shape
        np.testing.assert_array_equal(out.data, 0.0)

    def test_forward_is_deterministic(self):
        net = DenoiserNet.build("small_unet", (1, 8, 8), RngStream(2))
        self._randomize(net, seed=3)
        x = Tensor(np.random.default_rng(1).normal(size=(2, 1, 8, 8)).astype(np.float32))
        a = net.predict_eps(x, 100)
        b = net.predict_eps(x, 100)
        np.testing.assert_array_equal(a.data, b.data)

    def test_per_example_steps(self):
        net = DenoiserNet.build("mlp", (4,), RngStream(4))
        self._randomize(net, seed=5)
        x = Tensor(np.random.default_rng(2).normal(size=(3, 4)).astype(np.float32))
        batched = net.predict_eps(x, np.array([10, 500, 900]))
        for i, t in enumerate((10, 500, 900)):
            single = net.predict_eps(Tensor(x.data[i : i + 1]), t)
            # float32 GEMM accumulation differs slightly between batch shapes
            np.testing.assert_allclose(batched.data[i], single.data[0], rtol=1e-4, atol=1e-4)

    @staticmethod
    def _randomize(net, seed):
        # fan-in scaled so activations stay O(1) through the depth
        rng = RngStream(seed)
        for name in sorted(net.params):
            p = net.params[name]
            if p.data.ndim >= 2:
                fan = int(np.prod(p.data.shape[1:])) if p.data.ndim == 4 else p.data.shape[0]
                std = np.float32(0.7 * np.sqrt(2.0 / fan))
            else:
                std = np.float32(0.05)
            p.data = rng.split(name).normal(p.data.shape) * std

    @pytest.mark.parametrize("arch,shape", [("mlp", (5,)), ("small_unet", (1, 8, 8))])
    def test_loss_gradient_matches_finite_differences(self, arch, shape):
        net = DenoiserNet.build(arch, shape, RngStream(6))
        self._randomize(net, seed=7)
        shadow = net.astype(np.float64)
        x = np.random.default_rng(3).normal(size=(2, *shape))
        eps = np.random.default_rng(4).normal(size=(2, *shape))

        def forward(params):
            shadow.params = params
            d = shadow.predict_eps(Tensor(x, dtype=np.float64), 300) - Tensor(eps, dtype=np.float64)
            return (d * d).sum()

        assert N.check_gradients(forward, shadow.params, n_probes=120, seed=11) < 1e-3

    def test_shape_mismatch_rejected(self):
        net = DenoiserNet.build("mlp", (4,), RngStream(8))
        with pytest.raises(ContractViolation):
            net.predict_eps(Tensor(np.zeros((2, 5), dtype=np.float32)), 1)

    def test_lipschitz_sane(self):
        for seed in range(3):
            net = DenoiserNet.build("small_unet", (1, 8, 8), RngStream(100 + seed))
            self._randomize(net, seed=200 + seed)
            x = np.random.default_rng(seed).normal(size=(1, 1, 8, 8)).astype(np.float32)
            delta = np.random.default_rng(seed + 50).normal(size=x.shape).astype(np.float32)
            delta *= 1e-3 / np.linalg.norm(delta)
            a = net.predict_eps(Tensor(x), 400).data
            b = net.predict_eps(Tensor(x + delta), 400).data
            assert np.linalg.norm(b - a) < 1.0


class TestGan:
    def test_default_latent_dim_is_100(self):
        pair = GanPair.build((1, 16, 16), RngStream(1))
        assert pair.latent_dim == 100

    def test_fixed_z_fixed_output(self):
        pair = GanPair.build((1, 16, 16), RngStream(2))
        z = Tensor(RngStream(3).normal((4, 100)))
        a = generate(pair, z)
        b = generate(pair, z)
        assert a.shape == (4, 1, 16, 16)
        np.testing.assert_array_equal(a.data, b.data)
        assert a.data.min() >= -1.0 and a.data.max() <= 1.0

    def test_empty_batch(self):
        pair = GanPair.build((2,), RngStream(4), latent_dim=8)
        out = generate(pair, Tensor(np.zeros((0, 8), dtype=np.float32)))
        assert out.shape == (0, 2)

    def test_wrong_latent_dim_rejected(self):
        pair = GanPair.build((2,), RngStream(5), latent_dim=8)
        with pytest.raises(ContractViolation):
            generate(pair, Tensor(np.zeros((3, 9), dtype=np.float32)))

    def test_scores_finite_and_sigmoid_rank_invariant(self):
        pair = GanPair.build((1, 16, 16), RngStream(6))
        x = Tensor(RngStream(7).normal((8, 1, 16, 16)))
        s = discriminate(pair, x).data
        assert s.shape == (8,)
        assert np.all(np.isfinite(s))
        sig = 1 / (1 + np.exp(-s.astype(np.float64)))
        np.testing.assert_array_equal(np.argsort(s), np.argsort(sig))

    def test_discriminator_shape_mismatch(self):
        pair = GanPair.build((1, 16, 16), RngStream(8))
        with pytest.raises(ContractViolation):
            discriminate(pair, Tensor(np.zeros((2, 1, 8, 8), dtype=np.float32)))

    def test_gan_gradients_match_finite_differences(self):
        pair = GanPair.build((3,), RngStream(9), latent_dim=4).astype(np.float64)
        z = np.random.default_rng(5).normal(size=(3, 4))

        def forward(params):
            pair.params = params
            s = pair.discriminate(pair.generate(Tensor(z, dtype=np.float64)))
            return (s * s).sum()

        assert N.check_gradients(forward, pair.params, n_probes=120, seed=12) < 1e-3

    def test_trained_discriminator_separates_toy_set(self):
        # tiny separable task: "real" points cluster at +0.5, noise at -0.5
        rng = RngStream(10)
        pair = GanPair.build((2,), rng, latent_dim=4)
        real = Tensor(rng.split("real").normal((64, 2)) * np.float32(0.05) + np.float32(0.5))
        fake = Tensor(rng.split("fake").normal((64, 2)) * np.float32(0.05) - np.float32(0.5))
        d_params = pair.discriminator_parameters()
        state = N.adam_state(d_params, lr=5e-3)
        for _ in range(60):
            loss = N.softplus(-pair.discriminate(real)).mean() + N.softplus(pair.discriminate(fake)).mean()
            grads = N.grad(loss, d_params)
            N.adam_step(state, d_params, grads)
        assert float(pair.discriminate(real).data.mean()) > float(pair.discriminate(fake).data.mean())
