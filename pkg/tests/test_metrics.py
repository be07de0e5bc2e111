import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmia.errors import ContractViolation
from dmia.metrics import asr, aucroc, frechet_distance, image_features, roc_curve, tpr_at_fpr


# ---- independent oracles ---------------------------------------------------------


def pair_count_auc(members, nonmembers):
    """Mann-Whitney statistic: fraction of correctly ordered pairs, ties half."""
    m = np.asarray(members, dtype=np.float64)
    nm = np.asarray(nonmembers, dtype=np.float64)
    wins = (m[:, None] > nm[None, :]).sum() + 0.5 * (m[:, None] == nm[None, :]).sum()
    return wins / (m.size * nm.size)


def exhaustive_thresholds(members, nonmembers):
    """All (tpr, fpr) pairs achievable by 'score >= c' over every distinct c, plus extremes."""
    m = np.asarray(members, dtype=np.float64)
    nm = np.asarray(nonmembers, dtype=np.float64)
    cands = np.unique(np.concatenate([m, nm, [np.inf]]))
    out = []
    for c in cands:
        out.append(((m >= c).mean(), (nm >= c).mean()))
    return out


def exhaustive_asr(members, nonmembers):
    return max((tpr + 1 - fpr) / 2 for tpr, fpr in exhaustive_thresholds(members, nonmembers))


def exhaustive_tpr_at(members, nonmembers, cap):
    ok = [tpr for tpr, fpr in exhaustive_thresholds(members, nonmembers) if fpr <= cap]
    return max(ok)


def random_score_set(rng):
    n_m = int(rng.integers(1, 40))
    n_nm = int(rng.integers(1, 40))
    if rng.random() < 0.4:  # force ties sometimes
        pool = rng.integers(0, 5, size=n_m + n_nm).astype(np.float64)
    else:
        pool = rng.normal(size=n_m + n_nm)
    return pool[:n_m], pool[n_m:]


class TestRocCurve:
    def test_perfect_separation_passes_through_0_1(self):
        curve = roc_curve(([2.0, 3.0], [0.0, 1.0]))
        assert any(np.array_equal(p, [0.0, 1.0]) for p in curve.points)

    def test_all_tied_is_diagonal(self):
        curve = roc_curve(([1.0, 1.0], [1.0, 1.0, 1.0]))
        np.testing.assert_array_equal(curve.points, [[0, 0], [1, 1]])

    def test_hand_vertices(self):
        curve = roc_curve(([0.8, 0.3], [0.6, 0.1]))
        want = [[0, 0], [0, 0.5], [0.5, 0.5], [0.5, 1], [1, 1]]
        np.testing.assert_allclose(curve.points, want)

    def test_monotone_and_endpoints(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            m, nm = random_score_set(rng)
            curve = roc_curve((m, nm))
            assert np.all(np.diff(curve.fpr) >= 0)
            assert np.all(np.diff(curve.tpr) >= 0)
            np.testing.assert_array_equal(curve.points[0], [0, 0])
            np.testing.assert_array_equal(curve.points[-1], [1, 1])

    def test_empty_class_rejected(self):
        with pytest.raises(ContractViolation):
            roc_curve(([], [1.0]))


class TestAucroc:
    def test_perfect(self):
        assert aucroc(([2.0, 3.0], [0.0, 1.0])) == 1.0

    def test_identical(self):
        assert aucroc(([1.0, 1.0], [1.0, 1.0])) == 0.5

    def test_hand_value(self):
        assert aucroc(([0.8, 0.3], [0.6, 0.1])) == pytest.approx(0.75, abs=1e-12)

    def test_matches_pair_counting(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            m, nm = random_score_set(rng)
            assert aucroc((m, nm)) == pytest.approx(pair_count_auc(m, nm), abs=1e-12)

    def test_class_swap_complement(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            m, nm = random_score_set(rng)
            assert aucroc((m, nm)) + aucroc((nm, m)) == pytest.approx(1.0, abs=1e-12)


class TestAsr:
    def test_perfect(self):
        assert asr(([2.0, 3.0], [0.0, 1.0])) == 1.0

    def test_identical(self):
        assert asr(([1.0, 1.0], [1.0, 1.0])) == 0.5

    def test_hand_value(self):
        assert asr(([0.8, 0.3], [0.6, 0.1])) == pytest.approx(0.75, abs=1e-12)

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            m, nm = random_score_set(rng)
            assert asr((m, nm)) == pytest.approx(exhaustive_asr(m, nm), abs=1e-12)


class TestTprAtFpr:
    def test_perfect(self):
        assert tpr_at_fpr(([2.0, 3.0], [0.0, 1.0]), 0.01) == 1.0

    def test_all_tied_conservative(self):
        assert tpr_at_fpr(([1.0] * 100, [1.0] * 100), 0.01) == 0.0

    def test_single_high_nonmember(self):
        rng = np.random.default_rng(4)
        m = rng.normal(size=100)
        nm = np.concatenate([rng.normal(size=99) - 5, [m.max() + 1]])
        assert tpr_at_fpr((m, nm), 0.01) == pytest.approx(exhaustive_tpr_at(m, nm, 0.01), abs=1e-12)

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            m, nm = random_score_set(rng)
            for cap in (0.01, 0.1, 0.5):
                assert tpr_at_fpr((m, nm), cap) == pytest.approx(exhaustive_tpr_at(m, nm, cap), abs=1e-12)

    def test_bad_cap(self):
        with pytest.raises(ContractViolation):
            tpr_at_fpr(([1.0], [0.0]), 0.0)


class TestRankInvariance:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from(["exp", "cube", "affine"]))
    def test_strictly_increasing_transforms(self, seed, kind):
        rng = np.random.default_rng(seed)
        m, nm = random_score_set(rng)
        f = {"exp": np.exp, "cube": lambda x: x**3, "affine": lambda x: 3.0 * x + 1.0}[kind]
        fm, fnm = f(m), f(nm)
        assert aucroc((fm, fnm)) == pytest.approx(aucroc((m, nm)), abs=1e-12)
        assert asr((fm, fnm)) == pytest.approx(asr((m, nm)), abs=1e-12)
        assert tpr_at_fpr((fm, fnm), 0.1) == pytest.approx(tpr_at_fpr((m, nm), 0.1), abs=1e-12)


class TestFrechet:
    def test_identical_sets_zero(self):
        x = np.random.default_rng(6).normal(size=(200, 5))
        assert frechet_distance(x, x.copy()) < 1e-6

    def test_1d_closed_form(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(5000, 1))
        b = rng.normal(size=(5000, 1)) + 3.0
        mu_diff = a.mean() - b.mean()
        sd_a, sd_b = a.std(ddof=1), b.std(ddof=1)
        want = mu_diff**2 + (sd_a - sd_b) ** 2
        assert frechet_distance(a, b) == pytest.approx(float(want), abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(8)
        a = rng.normal(size=(100, 4))
        b = rng.normal(size=(120, 4)) * 2 + 1
        assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), rel=1e-9)

    def test_matched_moments_near_zero(self):
        rng = np.random.default_rng(9)
        base = rng.normal(size=(400, 3))
        # two sets with identical first and second moments: the set and its negation-augmented twin
        a = np.concatenate([base, -base])
        b = np.concatenate([-base, base])
        assert frechet_distance(a, b) < 1e-6

    def test_nonnegative(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            a = rng.normal(size=(30, 6))
            b = rng.normal(size=(25, 6))
            assert frechet_distance(a, b) >= 0.0

    def test_dim_mismatch(self):
        with pytest.raises(ContractViolation):
            frechet_distance(np.zeros((5, 3)), np.zeros((5, 4)))

    def test_regularizes_small_n(self, caplog):
        import logging

        with caplog.at_level(logging.INFO, logger="dmia.metrics"):
            frechet_distance(np.random.default_rng(11).normal(size=(4, 8)), np.random.default_rng(12).normal(size=(40, 8)))
        assert any("regularizing covariance" in r.message for r in caplog.records)


class TestImageFeatures:
    def test_shape_and_block_means(self):
        imgs = np.ones((3, 2, 16, 16), dtype=np.float32)
        feats = image_features(imgs)
        assert feats.shape == (3, 64)
        np.testing.assert_allclose(feats, 1.0)

    def test_rejects_bad_side(self):
        with pytest.raises(ContractViolation):
            image_features(np.zeros((1, 1, 9, 9)))
