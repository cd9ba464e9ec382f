import math

import numpy as np
import pytest

from distrack.gaussian import (
    Gaussian,
    GaussianMixture,
    InformationPair,
    ci_fuse,
    gm_ci_fuse_pair,
    gm_ci_fuse_pair_with_log_mass,
    gm_from_arrays,
    gm_kla,
    gm_power,
    gm_product_pairwise,
    merge,
    prune,
    truncate,
)
from oracles import grid_1d, gm_pdf_1d, moments_1d, nwgm_1d, power_integral_1d


def scalar(mean, var):
    return Gaussian(np.array([mean]), np.array([[var]]))


def scalar_gm(pairs):
    return GaussianMixture(tuple((w, scalar(m, v)) for w, m, v in pairs))


class TestCiFuse:
    def test_single_density_identity(self):
        g = Gaussian(np.array([1.0, -2.0]), np.array([[2.0, 0.3], [0.3, 1.0]]))
        out = ci_fuse([g], [1.0])
        np.testing.assert_allclose(out.mean, g.mean, atol=1e-12)
        np.testing.assert_allclose(out.cov, g.cov, atol=1e-12)

    def test_idempotent_on_identical_inputs(self):
        g = scalar(0.0, 1.0)
        out = ci_fuse([g, g], [0.5, 0.5])
        np.testing.assert_allclose(out.mean, [0.0], atol=1e-12)
        np.testing.assert_allclose(out.cov, [[1.0]], atol=1e-12)

    def test_scalar_hand_values(self):
        # info pairs (1, 0) and (0.25, 0.5); averages 0.625 and 0.25
        out = ci_fuse([scalar(0.0, 1.0), scalar(2.0, 4.0)], [0.5, 0.5])
        assert out.mean[0] == pytest.approx(0.4, abs=1e-12)
        assert out.cov[0, 0] == pytest.approx(1.6, abs=1e-12)
        info = out.to_info()
        assert info.omega[0, 0] == pytest.approx(0.625, abs=1e-12)
        assert info.q[0] == pytest.approx(0.25, abs=1e-12)

    def test_information_matrix_is_weighted_average(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            d = int(rng.integers(1, 4))
            gs = []
            for _ in range(3):
                A = rng.normal(size=(d, d))
                gs.append(Gaussian(rng.normal(size=d), A @ A.T + d * np.eye(d)))
            w = rng.random(3)
            w = w / w.sum()
            fused = ci_fuse(gs, w)
            omega_bar = sum(wi * g.to_info().omega for wi, g in zip(w, gs))
            scale = np.max(np.abs(omega_bar))
            np.testing.assert_allclose(fused.to_info().omega, omega_bar,
                                       atol=1e-10 * scale)

    def test_non_invertible_covariance_error(self):
        bad = Gaussian(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))
        with pytest.raises(np.linalg.LinAlgError, match="non-invertible covariance"):
            ci_fuse([bad, scalar(0.0, 1.0).to_info().to_gaussian()], [0.5, 0.5])

    def test_weights_must_be_simplex(self):
        g = scalar(0.0, 1.0)
        with pytest.raises(ValueError):
            ci_fuse([g, g], [0.7, 0.7])


class TestInformationPair:
    def test_round_trip(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            A = rng.normal(size=(3, 3))
            g = Gaussian(rng.normal(size=3), A @ A.T + 3 * np.eye(3))
            back = g.to_info().to_gaussian()
            np.testing.assert_allclose(back.mean, g.mean, rtol=1e-8, atol=1e-10)
            np.testing.assert_allclose(back.cov, g.cov, rtol=1e-8, atol=1e-10)


class TestGmPower:
    def test_omega_one_identity(self):
        gm = scalar_gm([(0.7, 0.0, 1.0), (0.3, 5.0, 2.0)])
        out = gm_power(gm, 1.0)
        np.testing.assert_allclose(out.weights, gm.weights, atol=1e-12)
        for (wa, ga), (wb, gb) in zip(out.components, gm.components):
            np.testing.assert_allclose(ga.cov, gb.cov, atol=1e-12)

    def test_single_component_closed_form(self):
        # (1, N(0,2))^0.5 -> N(0,4) with weight sqrt(8*pi)/(4*pi)^(1/4)
        gm = scalar_gm([(1.0, 0.0, 2.0)])
        out = gm_power(gm, 0.5)
        assert len(out) == 1
        w, g = out.components[0]
        assert w == pytest.approx(math.sqrt(8 * math.pi) / (4 * math.pi) ** 0.25,
                                  rel=1e-12)
        assert g.mean[0] == pytest.approx(0.0, abs=1e-12)
        assert g.cov[0, 0] == pytest.approx(4.0, rel=1e-12)

    def test_separated_mixture_matches_pointwise_power_integral(self):
        # component separation 8 sigma: the per-component approximation of the
        # mixture power should integrate to the true integral within 1%
        gm = scalar_gm([(0.6, 0.0, 1.0), (0.4, 8.0, 1.0)])
        out = gm_power(gm, 0.5)
        x, dx = grid_1d(-30.0, 40.0, 14001)
        truth = power_integral_1d(gm_pdf_1d(x, [0.6, 0.4], [0.0, 8.0], [1.0, 1.0]),
                                  0.5, dx)
        assert out.total_weight() == pytest.approx(truth, rel=0.01)

    def test_rejects_nonpositive_exponent(self):
        gm = scalar_gm([(1.0, 0.0, 1.0)])
        with pytest.raises(ValueError):
            gm_power(gm, 0.0)


class TestGmProduct:
    def test_unit_gaussians_product(self):
        a = scalar_gm([(1.0, 0.0, 1.0)])
        out = gm_product_pairwise(a, a)
        assert len(out) == 1
        w, g = out.components[0]
        assert w == pytest.approx(1.0 / math.sqrt(4 * math.pi), rel=1e-12)
        assert g.mean[0] == pytest.approx(0.0, abs=1e-12)
        assert g.cov[0, 0] == pytest.approx(0.5, rel=1e-12)

    def test_narrow_component_dominates_posterior_mean(self):
        a = scalar_gm([(1.0, 3.0, 1e-6)])
        b = scalar_gm([(1.0, 0.0, 4.0)])
        out = gm_product_pairwise(a, b).normalized()
        mean = sum(w * g.mean[0] for w, g in out.components)
        assert abs(mean - 3.0) < 1e-3

    def test_component_count_is_product(self):
        a = scalar_gm([(0.5, 0.0, 1.0), (0.5, 1.0, 1.0)])
        b = scalar_gm([(0.4, 0.0, 1.0), (0.3, 2.0, 1.0), (0.3, 4.0, 1.0)])
        assert len(gm_product_pairwise(a, b)) == 6

    def test_pointwise_product_identity(self):
        rng = np.random.default_rng(11)
        a = scalar_gm([(0.5, -1.0, 1.5), (0.5, 2.0, 0.5)])
        b = scalar_gm([(0.3, 0.0, 2.0), (0.7, 1.0, 1.0)])
        prod = gm_product_pairwise(a, b)
        for x in rng.uniform(-4, 4, size=100):
            xv = np.array([x])
            want = a.pdf(xv) * b.pdf(xv)
            assert prod.pdf(xv) == pytest.approx(want, rel=1e-9, abs=1e-300)


class TestGmCiFusePair:
    def test_self_fusion_fixed_point(self):
        a = scalar_gm([(1.0, 1.5, 2.0)])
        out = gm_ci_fuse_pair(a, a, 0.5)
        assert len(out) == 1
        w, g = out.components[0]
        assert w == pytest.approx(1.0, rel=1e-12)
        assert g.mean[0] == pytest.approx(1.5, rel=1e-12)
        assert g.cov[0, 0] == pytest.approx(2.0, rel=1e-12)

    def test_single_components_reduce_to_ci(self):
        a = scalar_gm([(1.0, 0.0, 1.0)])
        b = scalar_gm([(1.0, 2.0, 4.0)])
        out = gm_ci_fuse_pair(a, b, 0.5)
        assert len(out) == 1
        _, g = out.components[0]
        assert g.mean[0] == pytest.approx(0.4, rel=1e-10)
        assert g.cov[0, 0] == pytest.approx(1.6, rel=1e-10)

    def test_output_normalized_for_random_mixtures(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            a = scalar_gm([(w, rng.uniform(-3, 3), rng.uniform(0.5, 2.0))
                           for w in np.full(3, 1.0 / 3.0)])
            b = scalar_gm([(w, rng.uniform(-3, 3), rng.uniform(0.5, 2.0))
                           for w in np.full(3, 1.0 / 3.0)])
            out = gm_ci_fuse_pair(a, b, rng.uniform(0.2, 0.8))
            assert out.total_weight() == pytest.approx(1.0, abs=1e-9)

    def test_log_mass_matches_quadrature_single_components(self):
        # exact case: the weighted geometric mean of Gaussians is Gaussian
        a = scalar_gm([(1.0, -1.0, 1.0)])
        b = scalar_gm([(1.0, 0.5, 1.5)])
        omega = 0.3
        _, log_mass = gm_ci_fuse_pair_with_log_mass(a, b, omega)
        x, dx = grid_1d(-40.0, 40.0, 16001)
        fa = gm_pdf_1d(x, [1.0], [-1.0], [1.0])
        fb = gm_pdf_1d(x, [1.0], [0.5], [1.5])
        _, z = nwgm_1d([fa, fb], [omega, 1 - omega], dx)
        assert math.exp(log_mass) == pytest.approx(z, rel=1e-4)

    def test_log_mass_near_quadrature_for_separated_mixtures(self):
        # component-wise power is an approximation; good when modes are far apart
        a = scalar_gm([(0.5, -10.0, 1.0), (0.5, 10.0, 2.0)])
        b = scalar_gm([(0.4, -10.5, 1.5), (0.6, 9.5, 1.0)])
        omega = 0.45
        _, log_mass = gm_ci_fuse_pair_with_log_mass(a, b, omega)
        x, dx = grid_1d(-60.0, 60.0, 24001)
        fa = gm_pdf_1d(x, [0.5, 0.5], [-10.0, 10.0], [1.0, 2.0])
        fb = gm_pdf_1d(x, [0.4, 0.6], [-10.5, 9.5], [1.5, 1.0])
        _, z = nwgm_1d([fa, fb], [omega, 1 - omega], dx)
        assert math.exp(log_mass) == pytest.approx(z, rel=0.01)

    def test_empty_input_error(self):
        a = scalar_gm([(1.0, 0.0, 1.0)])
        with pytest.raises(ValueError):
            gm_ci_fuse_pair(a, GaussianMixture(()), 0.5)


class TestGmKla:
    def test_single_gaussian_inputs_match_quadrature(self):
        mixtures = [
            scalar_gm([(1.0, -1.0, 1.0)]),
            scalar_gm([(1.0, 1.0, 1.5)]),
            scalar_gm([(1.0, 0.5, 2.5)]),
        ]
        w = [0.5, 0.3, 0.2]
        fused, log_z = gm_kla(mixtures, w)
        x, dx = grid_1d(-40.0, 40.0, 16001)
        grids = [
            gm_pdf_1d(x, [1.0], [-1.0], [1.0]),
            gm_pdf_1d(x, [1.0], [1.0], [1.5]),
            gm_pdf_1d(x, [1.0], [0.5], [2.5]),
        ]
        oracle, z = nwgm_1d(grids, w, dx)
        _, mean, var = moments_1d(oracle, x, dx)
        assert math.exp(log_z) == pytest.approx(z, rel=1e-4)
        assert len(fused) == 1
        _, g = fused.components[0]
        assert g.mean[0] == pytest.approx(mean, abs=1e-6)
        assert g.cov[0, 0] == pytest.approx(var, rel=1e-4)
        # chained pairwise fusion must agree with the direct three-way CI rule
        direct = ci_fuse([m.components[0][1] for m in mixtures], w)
        assert g.mean[0] == pytest.approx(direct.mean[0], rel=1e-10)
        assert g.cov[0, 0] == pytest.approx(direct.cov[0, 0], rel=1e-10)

    def test_separated_mixtures_near_quadrature(self):
        mixtures = [
            scalar_gm([(0.6, -12.0, 1.0), (0.4, 12.0, 2.0)]),
            scalar_gm([(0.5, -11.5, 1.5), (0.5, 12.5, 0.8)]),
        ]
        w = [0.55, 0.45]
        fused, log_z = gm_kla(mixtures, w)
        x, dx = grid_1d(-60.0, 60.0, 24001)
        grids = [
            gm_pdf_1d(x, [0.6, 0.4], [-12.0, 12.0], [1.0, 2.0]),
            gm_pdf_1d(x, [0.5, 0.5], [-11.5, 12.5], [1.5, 0.8]),
        ]
        oracle, z = nwgm_1d(grids, w, dx)
        _, mean, _ = moments_1d(oracle, x, dx)
        assert math.exp(log_z) == pytest.approx(z, rel=0.01)
        fused_mean = sum(w_ * g.mean[0] for w_, g in fused.components)
        assert fused_mean == pytest.approx(mean, abs=0.05)

    def test_single_gaussians_match_ci(self):
        mixtures = [scalar_gm([(1.0, 0.0, 1.0)]), scalar_gm([(1.0, 2.0, 4.0)])]
        fused, _ = gm_kla(mixtures, [0.5, 0.5])
        _, g = fused.components[0]
        assert g.mean[0] == pytest.approx(0.4, rel=1e-10)
        assert g.cov[0, 0] == pytest.approx(1.6, rel=1e-10)


class TestHousekeeping:
    def test_merge_leaves_distant_components_alone(self):
        gm = scalar_gm([(0.5, 0.0, 1.0), (0.5, 10.0, 1.0)])
        out = merge(gm, 4.0)
        assert len(out) == 2

    def test_merge_identical_components(self):
        gm = scalar_gm([(0.5, 1.0, 2.0), (0.5, 1.0, 2.0)])
        out = merge(gm, 4.0)
        assert len(out) == 1
        w, g = out.components[0]
        assert w == pytest.approx(1.0, abs=1e-12)
        assert g.mean[0] == pytest.approx(1.0, abs=1e-12)
        assert g.cov[0, 0] == pytest.approx(2.0, abs=1e-12)

    def test_merge_hand_values(self):
        d = 1.5
        gm = scalar_gm([(0.5, 0.0, 1.0), (0.5, d, 1.0)])
        out = merge(gm, 4.0)
        assert len(out) == 1
        _, g = out.components[0]
        assert g.mean[0] == pytest.approx(d / 2, abs=1e-12)
        assert g.cov[0, 0] == pytest.approx(1.0 + d * d / 4.0, abs=1e-12)

    def test_merge_preserves_mass_and_mean(self):
        rng = np.random.default_rng(13)
        gm = scalar_gm([(float(w), float(rng.uniform(-5, 5)), float(rng.uniform(0.5, 2)))
                        for w in rng.random(6)])
        out = merge(gm, 4.0)
        assert out.total_weight() == pytest.approx(gm.total_weight(), abs=1e-12)
        mean_in = sum(w * g.mean[0] for w, g in gm.components)
        mean_out = sum(w * g.mean[0] for w, g in out.components)
        assert mean_out == pytest.approx(mean_in, abs=1e-9)

    def test_prune_noop_below_cap(self):
        gm = scalar_gm([(0.5, 0.0, 1.0), (0.3, 1.0, 1.0), (0.2, 2.0, 1.0)])
        assert prune(gm, 5) is gm

    def test_prune_keeps_heaviest(self):
        gm = scalar_gm([(0.5, 0.0, 1.0), (0.3, 1.0, 1.0), (0.2, 2.0, 1.0)])
        out = prune(gm, 2)
        assert [w for w, _ in out.components] == [0.5, 0.3]

    def test_prune_tie_keeps_first_index(self):
        gm = scalar_gm([(0.5, 0.0, 1.0), (0.5, 7.0, 1.0)])
        out = prune(gm, 1)
        assert out.components[0][1].mean[0] == pytest.approx(0.0)

    def test_truncate_drops_small_weights(self):
        gm = scalar_gm([(0.9, 0.0, 1.0), (1e-6, 5.0, 1.0)])
        out = truncate(gm, 1e-4)
        assert len(out) == 1
        assert out.total_weight() == pytest.approx(0.9)


class TestMixtureBasics:
    def test_moment_match(self):
        gm = scalar_gm([(0.5, 0.0, 1.0), (0.5, 2.0, 1.0)])
        g = gm.normalized().moment_match()
        assert g.mean[0] == pytest.approx(1.0, abs=1e-12)
        assert g.cov[0, 0] == pytest.approx(2.0, abs=1e-12)

    def test_from_arrays_and_pdf(self):
        gm = gm_from_arrays([0.5, 0.5], [[0.0], [2.0]], [[[1.0]], [[1.0]]])
        x, _ = grid_1d(-1.0, 1.0, 11)
        want = gm_pdf_1d(x, [0.5, 0.5], [0.0, 2.0], [1.0, 1.0])
        got = np.array([gm.pdf(np.array([xi])) for xi in x])
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            GaussianMixture(((-0.1, scalar(0.0, 1.0)),))
