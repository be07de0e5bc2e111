import numpy as np
import pytest

from dmia.errors import ContractViolation
from dmia.schedules import cosine_schedule, linear_schedule, make_schedule, t_for_alpha_bar


class TestLinear:
    def test_endpoints_at_t1000(self):
        s = linear_schedule(1000)
        assert s.beta(1) == pytest.approx(1e-4)
        assert s.beta(1000) == pytest.approx(0.02)

    def test_alpha_bar_200(self):
        s = linear_schedule(1000)
        # independent running product over the beta sequence
        prod = 1.0
        for t in range(1, 201):
            prod *= 1.0 - s.beta(t)
        assert s.alpha_bar(200) == pytest.approx(prod, rel=1e-12)
        assert abs(s.alpha_bar(200) - 0.66) < 0.01

    def test_strictly_decreasing(self):
        for T in (10, 100, 1000):
            s = linear_schedule(T)
            assert np.all(np.diff(s.alpha_bars) < 0)

    def test_t_too_small(self):
        with pytest.raises(ContractViolation):
            linear_schedule(1)


class TestCosine:
    def test_alpha_bar_zero_is_one(self):
        assert cosine_schedule(1000).alpha_bar(0) == 1.0

    def test_alpha_bar_350(self):
        # closed form: cos^2(((t/T + s)/(1+s)) * pi/2) normalized by t=0
        s_off = 0.008

        def f(t):
            return np.cos((t / 1000 + s_off) / (1 + s_off) * np.pi / 2) ** 2

        want = f(350) / f(0)
        s = cosine_schedule(1000)
        assert s.alpha_bar(350) == pytest.approx(want, rel=1e-9)
        assert abs(s.alpha_bar(350) - 0.72) < 0.01

    def test_peak_alpha_bar_near_paper_window(self):
        s = cosine_schedule(1000)
        t = int(np.argmin(np.abs(s.alpha_bars - 0.7)))
        assert 330 <= t <= 370

    def test_t_too_small(self):
        with pytest.raises(ContractViolation):
            cosine_schedule(0)


class TestAnchors:
    def test_cosine_target_07(self):
        assert 330 <= t_for_alpha_bar(cosine_schedule(1000), 0.7) <= 370

    def test_linear_target_07(self):
        assert 180 <= t_for_alpha_bar(linear_schedule(1000), 0.7) <= 220

    def test_exact_hit_returns_that_t(self):
        s = cosine_schedule(1000)
        assert t_for_alpha_bar(s, s.alpha_bar(5)) == 5

    def test_target_out_of_range(self):
        s = cosine_schedule(1000)
        with pytest.raises(ContractViolation):
            t_for_alpha_bar(s, 1.5)
        with pytest.raises(ContractViolation):
            t_for_alpha_bar(s, float(s.alpha_bars[-1]) / 2)


class TestInvariants:
    @pytest.mark.parametrize("kind", ["linear", "cosine"])
    @pytest.mark.parametrize("T", [10, 100, 1000])
    def test_product_consistency_and_ranges(self, kind, T):
        s = make_schedule(kind, T)
        assert s.betas.shape == (T,)
        assert s.alpha_bars.shape == (T + 1,)
        assert np.all(s.betas > 0) and np.all(s.betas < 1)
        assert np.all(np.diff(s.alpha_bars) < 0)
        assert s.alpha_bars[-1] < 0.01
        recomputed = np.cumprod(1.0 - s.betas)
        rel = np.abs(recomputed - s.alpha_bars[1:]) / recomputed
        assert rel.max() <= 1e-6

    def test_unknown_kind(self):
        with pytest.raises(ContractViolation):
            make_schedule("quadratic", 100)
