import math

import numpy as np
import pytest

import dmia.numerics as N
from dmia.diffusion import (
    SamplerSpec,
    ddim_step,
    diffuse,
    sample,
    sigma_eta,
    sigma_for,
    sigma_hat,
    simple_loss,
)
from dmia.errors import ContractViolation
from dmia.numerics import RngStream, Tensor
from dmia.schedules import NoiseSchedule, cosine_schedule, linear_schedule


def toy_schedule(betas):
    """Hand-built schedule; bypasses the factory invariants on purpose."""
    betas = np.asarray(betas, dtype=np.float64)
    return NoiseSchedule("linear", len(betas), betas, np.concatenate([[1.0], np.cumprod(1 - betas)]))


class ZeroNet:
    """Predicts zero noise for any input."""

    def __init__(self, input_shape):
        self.input_shape = tuple(input_shape)

    def predict_eps(self, x_t, t):
        return Tensor(np.zeros_like(x_t.data))


class EpsOracleNet:
    """Recovers the exact noise used by diffuse, given the clean batch."""

    def __init__(self, x0, schedule):
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.schedule = schedule
        self.input_shape = tuple(self.x0.shape[1:])

    def predict_eps(self, x_t, t):
        t_arr = np.broadcast_to(np.asarray(t), (x_t.shape[0],))
        abar = self.schedule.alpha_bars[t_arr].reshape(-1, *([1] * (len(x_t.shape) - 1)))
        eps = (x_t.data.astype(np.float64) - np.sqrt(abar) * self.x0) / np.sqrt(1 - abar)
        return Tensor(eps.astype(np.float32))


class CountingNet(ZeroNet):
    def __init__(self, input_shape):
        super().__init__(input_shape)
        self.calls = 0

    def predict_eps(self, x_t, t):
        self.calls += 1
        return super().predict_eps(x_t, t)


class TestDiffuse:
    def test_t0_returns_x0(self):
        s = linear_schedule(1000)
        x0 = Tensor(np.random.default_rng(0).normal(size=(4, 3)).astype(np.float32))
        eps = Tensor(np.ones((4, 3), dtype=np.float32))
        out = diffuse(x0, 0, eps, s)
        np.testing.assert_array_equal(out.data, x0.data)

    def test_near_full_noise_returns_eps(self):
        s = toy_schedule([0.9, 0.9999999])  # abar_2 ~ 1e-8
        x0 = Tensor(np.ones((2, 3), dtype=np.float32))
        eps = Tensor(np.random.default_rng(1).normal(size=(2, 3)).astype(np.float32))
        out = diffuse(x0, 2, eps, s)
        np.testing.assert_allclose(out.data, eps.data, atol=1e-3)

    def test_scalar_hand_value(self):
        s = toy_schedule([0.2, 0.2])  # abar_2 = 0.64 exactly
        out = diffuse(Tensor([[1.0]]), 2, Tensor([[0.5]]), s)
        assert out.data[0, 0] == pytest.approx(0.8 * 1.0 + 0.6 * 0.5, rel=1e-6)

    def test_t_out_of_range(self):
        s = linear_schedule(100)
        x = Tensor(np.zeros((1, 2), dtype=np.float32))
        with pytest.raises(ContractViolation):
            diffuse(x, 101, x, s)

    def test_shape_mismatch(self):
        s = linear_schedule(100)
        with pytest.raises(ContractViolation):
            diffuse(Tensor(np.zeros((1, 2))), 5, Tensor(np.zeros((1, 3))), s)

    def test_marginal_moments(self):
        s = cosine_schedule(1000)
        t = 400
        n = 10_000
        rng = RngStream(5)
        x0_val = 0.3
        x0 = Tensor(np.full((n, 1), x0_val, dtype=np.float32))
        eps = Tensor(rng.normal((n, 1)))
        out = diffuse(x0, t, eps, s).data
        abar = s.alpha_bar(t)
        want_mean = math.sqrt(abar) * x0_val
        want_var = 1 - abar
        # 3 sigma of the Monte Carlo estimators
        assert abs(out.mean() - want_mean) < 3 * math.sqrt(want_var / n)
        assert abs(out.var() - want_var) < 3 * want_var * math.sqrt(2 / n)


class TestSimpleLoss:
    def test_oracle_net_gives_zero(self):
        s = cosine_schedule(1000)
        x0 = np.random.default_rng(2).normal(size=(8, 16)).astype(np.float32) * 0.5
        net = EpsOracleNet(x0, s)
        loss = simple_loss(net, Tensor(x0), RngStream(3), s)
        assert float(loss.data) < 1e-9

    def test_zero_net_gives_dimensionality(self):
        s = cosine_schedule(1000)
        d = 16
        x0 = Tensor(np.random.default_rng(3).normal(size=(256, d)).astype(np.float32))
        loss = simple_loss(ZeroNet((d,)), x0, RngStream(4), s)
        assert abs(float(loss.data) - d) / d < 0.05

    def test_fixed_rng_bit_identical(self):
        s = linear_schedule(1000)
        x0 = Tensor(np.random.default_rng(4).normal(size=(8, 4)).astype(np.float32))
        a = simple_loss(ZeroNet((4,)), x0, RngStream(9, 2), s)
        b = simple_loss(ZeroNet((4,)), x0, RngStream(9, 2), s)
        assert a.data == b.data

    def test_empty_batch_rejected(self):
        s = linear_schedule(100)
        with pytest.raises(ContractViolation):
            simple_loss(ZeroNet((4,)), Tensor(np.zeros((0, 4))), RngStream(1), s)


class TestSigmas:
    def _pair_schedule(self):
        # abar_1 = 0.9, abar_2 = 0.5 -> betas (0.1, 4/9)
        return toy_schedule([0.1, 4.0 / 9.0])

    def test_eta_zero(self):
        s = cosine_schedule(1000)
        tau = (250, 500, 750, 1000)
        for i in range(len(tau)):
            assert sigma_eta(s, tau, i, 0.0) == 0.0

    def test_eta_hand_value(self):
        s = self._pair_schedule()
        got = sigma_eta(s, (1, 2), 1, 1.0)
        want = math.sqrt(0.1 / 0.5) * math.sqrt(1 - 0.5 / 0.9)
        assert got == pytest.approx(want, rel=1e-9)
        assert got == pytest.approx(0.2981, abs=1e-4)

    def test_eta_linearity(self):
        s = self._pair_schedule()
        assert sigma_eta(s, (1, 2), 1, 2.0) == pytest.approx(2 * sigma_eta(s, (1, 2), 1, 1.0), rel=1e-12)

    def test_hat_equal_abars_gives_zero(self):
        s = toy_schedule([1e-12, 0.5])
        assert sigma_hat(s, (1,), 0) == pytest.approx(0.0, abs=1e-5)

    def test_hat_hand_value(self):
        s = self._pair_schedule()
        assert sigma_hat(s, (1, 2), 1) == pytest.approx(math.sqrt(1 - 5.0 / 9.0), rel=1e-9)

    @pytest.mark.parametrize("make", [cosine_schedule, linear_schedule])
    def test_hat_dominates_eta1(self, make):
        s = make(1000)
        tau = tuple(range(50, 1001, 50))
        for i in range(len(tau)):
            assert sigma_eta(s, tau, i, 1.0) <= sigma_hat(s, tau, i) + 1e-12


class TestDdimStep:
    def test_recovers_x0_with_oracle(self):
        s = cosine_schedule(1000)
        x0 = np.random.default_rng(7).normal(size=(4, 2, 4, 4)).astype(np.float32) * 0.5
        net = EpsOracleNet(x0, s)
        t = 600
        eps = Tensor(RngStream(8).normal(x0.shape))
        x_t = diffuse(Tensor(x0), t, eps, s)
        out = ddim_step(net, x_t, t, 0, 0.0, RngStream(0), s)
        np.testing.assert_allclose(out.data, x0, atol=1e-4)

    def test_sigma_zero_deterministic_and_no_rng_use(self):
        s = cosine_schedule(1000)
        net = ZeroNet((3,))
        x = Tensor(np.random.default_rng(9).normal(size=(2, 3)).astype(np.float32))
        rng = RngStream(1, 2, 3)
        a = ddim_step(net, x, 500, 250, 0.0, rng, s)
        assert (rng.seed, rng.stream_id, rng.position) == (1, 2, 3)
        b = ddim_step(net, x, 500, 250, 0.0, rng, s)
        np.testing.assert_array_equal(a.data, b.data)

    def test_composition_matches_sample(self):
        s = linear_schedule(10)
        net = ZeroNet((4,))
        rng_a = RngStream(12)
        full = sample(net, SamplerSpec(s, tuple(range(1, 11)), "eta", 0.0), 3, rng_a)
        rng_b = RngStream(12)
        x = Tensor(rng_b.normal((3, 4)))
        for t in range(10, 0, -1):
            x = ddim_step(net, x, t, t - 1, 0.0, rng_b, s)
        np.testing.assert_array_equal(full.data, np.clip(x.data, -1, 1))

    def test_negative_radicand_names_sigma(self):
        s = cosine_schedule(1000)
        net = ZeroNet((3,))
        x = Tensor(np.zeros((1, 3), dtype=np.float32))
        with pytest.raises(ContractViolation, match="sigma"):
            ddim_step(net, x, 500, 0, 0.5, RngStream(0), s)

    def test_invalid_transition(self):
        s = cosine_schedule(100)
        with pytest.raises(ContractViolation):
            ddim_step(ZeroNet((3,)), Tensor(np.zeros((1, 3))), 5, 5, 0.0, RngStream(0), s)


class TestSample:
    def test_twenty_net_evaluations(self):
        s = cosine_schedule(1000)
        net = CountingNet((4,))
        spec = SamplerSpec.uniform(s, 20)
        assert spec.tau == tuple(range(50, 1001, 50))
        sample(net, spec, 5, RngStream(3))
        assert net.calls == 20

    def test_eta0_bit_identical(self):
        s = cosine_schedule(1000)
        net = ZeroNet((4,))
        spec = SamplerSpec.uniform(s, 10)
        a = sample(net, spec, 6, RngStream(21))
        b = sample(net, spec, 6, RngStream(21))
        np.testing.assert_array_equal(a.data, b.data)

    def test_eta0_isolated_from_other_draws(self):
        s = cosine_schedule(1000)
        net = ZeroNet((4,))
        spec = SamplerSpec.uniform(s, 10)
        base = RngStream(77)
        other = base.split("elsewhere")
        a = sample(net, spec, 4, base.split("sampling"))
        other.normal((1000,))  # unrelated consumption
        b = sample(net, spec, 4, base.split("sampling"))
        np.testing.assert_array_equal(a.data, b.data)

    def test_noisy_modes_finite_and_in_range(self):
        s = cosine_schedule(1000)
        rng_net = RngStream(1)
        from dmia.models import DenoiserNet

        net = DenoiserNet.build("mlp", (6,), rng_net)
        # random (non-zero) parameters: untrained net must still sample cleanly
        for p in net.params.values():
            p.data = RngStream(2).split(id(p) % 997).normal(p.data.shape) * 0.3
        for mode, eta in (("eta", 0.0), ("eta", 1.0), ("hat", 0.0)):
            spec = SamplerSpec.uniform(s, 20, mode, eta)
            out = sample(net, spec, 1000, RngStream(5)).data
            assert np.all(np.isfinite(out))
            assert out.min() >= -1.0 and out.max() <= 1.0

    def test_bad_spec_rejected(self):
        s = cosine_schedule(1000)
        with pytest.raises(ContractViolation):
            SamplerSpec(s, ())
        with pytest.raises(ContractViolation):
            SamplerSpec(s, (10, 10))
        with pytest.raises(ContractViolation):
            SamplerSpec(s, (10, 2000))
        with pytest.raises(ContractViolation):
            SamplerSpec(s, (10,), "nope")
        with pytest.raises(ContractViolation):
            SamplerSpec(s, (10,), "eta", -1.0)
        with pytest.raises(ContractViolation):
            sample(ZeroNet((2,)), SamplerSpec.uniform(s, 10), 0, RngStream(0))
