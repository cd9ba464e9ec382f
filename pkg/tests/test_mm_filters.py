import math

import numpy as np
import pytest

from distrack.gaussian import Gaussian, gaussian_logpdf
from distrack.kalman import LinearModel, kf_correct, kf_predict
from distrack.mm_filters import (
    JumpMarkovModel,
    ModeBank,
    bank_fused,
    gpb1_step,
    imm_step,
    pmf_kla,
    pmf_power,
    pmf_product,
)


def scalar_mode(a, q, r):
    return LinearModel(A=[[a]], Q=[[q]], C=[[1.0]], R=[[r]])


def scalar_bank(pairs, mu):
    return ModeBank(tuple(Gaussian([m], [[v]]) for m, v in pairs), np.asarray(mu))


class TestGpb1:
    def test_single_mode_reduces_to_kf(self):
        mode = scalar_mode(0.9, 0.2, 0.5)
        model = JumpMarkovModel(modes=(mode,), jump=[[1.0]])
        bank = scalar_bank([(1.0, 2.0)], [1.0])
        y = np.array([0.7])
        new_bank, fused = gpb1_step(bank, y, model)
        want, _ = kf_correct(kf_predict(bank.mode_pdfs[0], mode), y, mode)
        np.testing.assert_allclose(fused.mean, want.mean, atol=1e-12)
        np.testing.assert_allclose(fused.cov, want.cov, atol=1e-12)
        assert new_bank.mu[0] == pytest.approx(1.0)

    def test_identical_modes_keep_mu(self):
        mode = scalar_mode(1.0, 0.1, 1.0)
        model = JumpMarkovModel(modes=(mode, mode), jump=np.eye(2))
        bank = scalar_bank([(0.0, 1.0), (0.0, 1.0)], [0.3, 0.7])
        new_bank, _ = gpb1_step(bank, np.array([0.5]), model)
        np.testing.assert_allclose(new_bank.mu, [0.3, 0.7], atol=1e-12)

    def test_hand_computed_mode_update(self):
        # two static modes that differ only in measurement noise; posterior mode
        # weight follows Bayes rule with the innovation likelihoods
        m1 = scalar_mode(1.0, 0.0, 0.5)
        m2 = scalar_mode(1.0, 0.0, 2.0)
        model = JumpMarkovModel(modes=(m1, m2), jump=np.eye(2))
        bank = scalar_bank([(0.0, 1.0), (0.0, 1.0)], [0.5, 0.5])
        y = np.array([1.3])
        _, _ = gpb1_step(bank, y, model)
        g1 = math.exp(gaussian_logpdf(y, np.zeros(1), [[1.5]]))
        g2 = math.exp(gaussian_logpdf(y, np.zeros(1), [[3.0]]))
        want = np.array([0.5 * g1, 0.5 * g2])
        want = want / want.sum()
        new_bank, _ = gpb1_step(bank, y, model)
        np.testing.assert_allclose(new_bank.mu, want, atol=1e-12)

    def test_reinitializes_all_modes_with_fused(self):
        m1 = scalar_mode(1.0, 0.1, 0.5)
        m2 = scalar_mode(0.8, 0.3, 1.0)
        model = JumpMarkovModel(modes=(m1, m2), jump=[[0.9, 0.2], [0.1, 0.8]])
        bank = scalar_bank([(0.0, 1.0), (0.5, 2.0)], [0.6, 0.4])
        new_bank, fused = gpb1_step(bank, np.array([0.2]), model)
        for pdf in new_bank.mode_pdfs:
            np.testing.assert_allclose(pdf.mean, fused.mean, atol=1e-15)
            np.testing.assert_allclose(pdf.cov, fused.cov, atol=1e-15)

    def test_fused_mean_is_mu_average(self):
        m1 = scalar_mode(1.0, 0.1, 0.5)
        m2 = scalar_mode(0.8, 0.3, 1.0)
        model = JumpMarkovModel(modes=(m1, m2), jump=[[0.9, 0.2], [0.1, 0.8]])
        bank = scalar_bank([(0.0, 1.0), (0.5, 2.0)], [0.6, 0.4])
        new_bank, fused = imm_step(bank, np.array([0.2]), model)
        want = sum(m * p.mean for m, p in zip(new_bank.mu, new_bank.mode_pdfs))
        np.testing.assert_allclose(fused.mean, want, atol=1e-14)

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_degenerate_update_raises(self):
        mode = scalar_mode(1.0, 0.0, 1.0)
        model = JumpMarkovModel(modes=(mode, mode), jump=np.eye(2))
        bank = scalar_bank([(0.0, 1.0), (0.0, 1.0)], [1.0, 0.0])
        with pytest.raises(ValueError, match="degenerate mode update"):
            gpb1_step(bank, np.array([1e200]), model)


class TestImm:
    def test_no_switching_equals_independent_filters(self):
        m1 = scalar_mode(1.0, 0.1, 0.5)
        m2 = scalar_mode(0.7, 0.2, 1.5)
        model = JumpMarkovModel(modes=(m1, m2), jump=np.eye(2))
        bank = scalar_bank([(0.2, 1.0), (-0.4, 2.0)], [0.5, 0.5])
        y = np.array([0.1])
        new_bank, _ = imm_step(bank, y, model)
        for j, mode in enumerate((m1, m2)):
            want, _ = kf_correct(kf_predict(bank.mode_pdfs[j], mode), y, mode)
            np.testing.assert_allclose(new_bank.mode_pdfs[j].mean, want.mean, atol=1e-12)
            np.testing.assert_allclose(new_bank.mode_pdfs[j].cov, want.cov, atol=1e-12)

    def test_single_mode_reduces_to_kf(self):
        mode = scalar_mode(0.9, 0.2, 0.5)
        model = JumpMarkovModel(modes=(mode,), jump=[[1.0]])
        bank = scalar_bank([(1.0, 2.0)], [1.0])
        y = np.array([-0.6])
        _, fused = imm_step(bank, y, model)
        want, _ = kf_correct(kf_predict(bank.mode_pdfs[0], mode), y, mode)
        np.testing.assert_allclose(fused.mean, want.mean, atol=1e-12)
        np.testing.assert_allclose(fused.cov, want.cov, atol=1e-12)

    def test_mixing_weights_sum_to_one(self):
        jump = np.array([[0.95, 0.05, 0.0],
                         [0.05, 0.9, 0.2],
                         [0.0, 0.05, 0.8]])
        mu = np.array([0.5, 0.3, 0.2])
        c = jump @ mu
        for j in range(3):
            mix = jump[j, :] * mu / c[j]
            assert math.fsum(mix) == pytest.approx(1.0, abs=1e-9)

    def test_skip_correction_with_none(self):
        m1 = scalar_mode(1.0, 0.1, 0.5)
        model = JumpMarkovModel(modes=(m1, m1), jump=np.eye(2))
        bank = scalar_bank([(0.0, 1.0), (0.0, 1.0)], [0.4, 0.6])
        new_bank, _ = imm_step(bank, None, model)
        np.testing.assert_allclose(new_bank.mu, [0.4, 0.6], atol=1e-12)


class TestPmfOps:
    def test_kla_single_pmf_identity(self):
        out = pmf_kla([np.array([0.2, 0.8])], [1.0])
        np.testing.assert_allclose(out, [0.2, 0.8], atol=1e-15)

    def test_kla_symmetric_inputs(self):
        out = pmf_kla([np.array([0.8, 0.2]), np.array([0.2, 0.8])], [0.5, 0.5])
        np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-12)

    def test_kla_hand_values(self):
        out = pmf_kla([np.array([0.9, 0.1]), np.array([0.5, 0.5])], [0.5, 0.5])
        want = np.array([math.sqrt(0.45), math.sqrt(0.05)])
        want = want / want.sum()
        np.testing.assert_allclose(out, want, atol=1e-12)
        assert out[0] == pytest.approx(0.75, abs=1e-12)

    def test_kla_zero_bin_absorbs(self):
        out = pmf_kla([np.array([0.0, 1.0]), np.array([0.5, 0.5])], [0.5, 0.5])
        np.testing.assert_allclose(out, [0.0, 1.0], atol=1e-15)

    def test_kla_all_zero_raises(self):
        with pytest.raises(ValueError):
            pmf_kla([np.array([1.0, 0.0]), np.array([0.0, 1.0])], [0.5, 0.5])

    def test_kla_matches_divergence_minimizer(self):
        # grid search over the 3-simplex for the weighted KL centroid
        rng = np.random.default_rng(3)
        pmfs = [rng.dirichlet(np.ones(3)) for _ in range(2)]
        w = [0.6, 0.4]
        fused = pmf_kla(pmfs, w)
        best, best_val = None, math.inf
        grid = np.linspace(1e-4, 1.0, 120)
        for a in grid:
            for b in grid:
                if a + b >= 1.0 - 1e-4:
                    continue
                mu = np.array([a, b, 1.0 - a - b])
                val = sum(wi * float(np.sum(mu * np.log(mu / p)))
                          for wi, p in zip(w, pmfs))
                if val < best_val:
                    best, best_val = mu, val
        np.testing.assert_allclose(fused, best, atol=2e-2)

    def test_power_and_product_normalize(self):
        p = np.array([0.5, 0.3, 0.2])
        assert pmf_power(p, 0.5).sum() == pytest.approx(1.0, abs=1e-12)
        assert pmf_product(p, p).sum() == pytest.approx(1.0, abs=1e-12)

    def test_operator_algebra_on_random_pmfs(self):
        # commutativity/associativity of the product, distributivity of powers
        rng = np.random.default_rng(5)
        for _ in range(20):
            p = rng.dirichlet(np.ones(4))
            q = rng.dirichlet(np.ones(4))
            r = rng.dirichlet(np.ones(4))
            np.testing.assert_allclose(pmf_product(p, q), pmf_product(q, p), atol=1e-12)
            np.testing.assert_allclose(pmf_product(pmf_product(p, q), r),
                                       pmf_product(p, pmf_product(q, r)), atol=1e-9)
            a, b = 0.4, 0.3
            np.testing.assert_allclose(
                pmf_product(pmf_power(p, a), pmf_power(p, b)),
                pmf_power(p, a + b), atol=1e-9)
            np.testing.assert_allclose(
                pmf_power(pmf_product(p, q), a),
                pmf_product(pmf_power(p, a), pmf_power(q, a)), atol=1e-9)
