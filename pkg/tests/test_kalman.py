import math

import numpy as np
import pytest

from distrack.gaussian import Gaussian, InformationPair, inv_psd
from distrack.kalman import (
    DEFAULT_UT,
    LinearModel,
    NonlinearModel,
    UtParams,
    ekf_step,
    info_correct,
    kf_correct,
    kf_predict,
    mskf_correct,
    numerical_jacobian,
    ukf_step,
    unscented_transform,
    ut_weights,
)
from distrack.scenario import SensorModel


def random_linear_model(rng, n=3, m=2):
    A = rng.normal(size=(n, n)) * 0.5
    Lq = rng.normal(size=(n, n)) * 0.3
    C = rng.normal(size=(m, n))
    Lr = rng.normal(size=(m, m)) * 0.4
    return LinearModel(A=A, Q=Lq @ Lq.T + 0.1 * np.eye(n),
                       C=C, R=Lr @ Lr.T + 0.1 * np.eye(m))


def random_gaussian(rng, n=3):
    L = rng.normal(size=(n, n))
    return Gaussian(rng.normal(size=n), L @ L.T + n * np.eye(n))


class TestKfPredict:
    def test_identity_model(self):
        g = Gaussian(np.array([1.0, 2.0]), np.eye(2))
        out = kf_predict(g, LinearModel(A=np.eye(2), Q=np.zeros((2, 2))))
        np.testing.assert_allclose(out.mean, g.mean, atol=1e-15)
        np.testing.assert_allclose(out.cov, g.cov, atol=1e-15)

    def test_scalar_hand_values(self):
        out = kf_predict(Gaussian([1.0], [[1.0]]), LinearModel(A=[[2.0]], Q=[[1.0]]))
        assert out.mean[0] == pytest.approx(2.0, abs=1e-15)
        assert out.cov[0, 0] == pytest.approx(5.0, abs=1e-15)

    def test_predicted_covariance_symmetric_psd(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            model = random_linear_model(rng)
            out = kf_predict(random_gaussian(rng), model)
            np.testing.assert_allclose(out.cov, out.cov.T, atol=1e-12)
            assert np.min(np.linalg.eigvalsh(out.cov)) > -1e-10


class TestKfCorrect:
    def test_scalar_hand_values(self):
        model = LinearModel(A=[[1.0]], Q=[[0.0]], C=[[1.0]], R=[[1.0]])
        post, innov = kf_correct(Gaussian([0.0], [[1.0]]), np.array([2.0]), model)
        assert post.mean[0] == pytest.approx(1.0, abs=1e-15)
        assert post.cov[0, 0] == pytest.approx(0.5, abs=1e-15)
        assert innov.mean[0] == pytest.approx(2.0, abs=1e-15)
        assert innov.cov[0, 0] == pytest.approx(2.0, abs=1e-15)

    def test_zero_innovation_keeps_mean(self):
        rng = np.random.default_rng(4)
        model = random_linear_model(rng)
        pred = random_gaussian(rng)
        post, _ = kf_correct(pred, model.C @ pred.mean, model)
        np.testing.assert_allclose(post.mean, pred.mean, atol=1e-10)

    def test_information_form_identity(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            model = random_linear_model(rng)
            pred = random_gaussian(rng)
            y = rng.normal(size=model.C.shape[0])
            post, _ = kf_correct(pred, y, model)
            omega_post = inv_psd(post.cov)
            omega_expect = inv_psd(pred.cov) + model.C.T @ inv_psd(model.R) @ model.C
            scale = np.max(np.abs(omega_expect))
            np.testing.assert_allclose(omega_post, omega_expect, atol=1e-9 * scale)


class TestInfoForm:
    def test_recursion_matches_covariance_form(self):
        # 200 random correction steps, information pair vs covariance pair
        rng = np.random.default_rng(8)
        for _ in range(200):
            model = random_linear_model(rng)
            pred = random_gaussian(rng)
            y = rng.normal(size=model.C.shape[0])
            post, _ = kf_correct(pred, y, model)
            info_post = info_correct(pred.to_info(), y, model.C, model.R)
            back = info_post.to_gaussian()
            np.testing.assert_allclose(back.mean, post.mean, atol=1e-9)
            scale = max(1.0, float(np.max(np.abs(post.cov))))
            np.testing.assert_allclose(back.cov, post.cov, atol=1e-9 * scale)


class TestMskf:
    def test_single_sensor_equals_kf(self):
        rng = np.random.default_rng(10)
        model = random_linear_model(rng)
        pred = random_gaussian(rng)
        y = rng.normal(size=model.C.shape[0])
        a, _ = kf_correct(pred, y, model)
        b, _ = mskf_correct(pred, [(y, model.C, model.R)])
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)
        np.testing.assert_allclose(a.cov, b.cov, atol=1e-12)

    def test_two_sensors_equal_sequential_updates(self):
        rng = np.random.default_rng(12)
        pred = random_gaussian(rng)
        C = np.array([[1.0, 0.0, 0.0]])
        R = np.array([[0.5]])
        y1, y2 = np.array([0.4]), np.array([-0.3])
        batch, _ = mskf_correct(pred, [(y1, C, R), (y2, C, R)])
        step1, _ = kf_correct(pred, y1, LinearModel(A=np.eye(3), Q=np.zeros((3, 3)), C=C, R=R))
        step2, _ = kf_correct(step1, y2, LinearModel(A=np.eye(3), Q=np.zeros((3, 3)), C=C, R=R))
        np.testing.assert_allclose(batch.mean, step2.mean, atol=1e-10)
        np.testing.assert_allclose(batch.cov, step2.cov, atol=1e-10)

    def test_stacked_innovation_dimension(self):
        rng = np.random.default_rng(14)
        pred = random_gaussian(rng)
        meas = [(np.zeros(2), np.zeros((2, 3)) + 0.1, np.eye(2)),
                (np.zeros(1), np.ones((1, 3)), np.eye(1))]
        _, innov = mskf_correct(pred, meas)
        assert innov.dim == 3


class TestUnscentedTransform:
    def test_identity_function(self):
        rng = np.random.default_rng(16)
        g = random_gaussian(rng, 4)
        m, P, Pxg = unscented_transform(g.mean, g.cov, lambda x: x)
        np.testing.assert_allclose(m, g.mean, atol=1e-10)
        np.testing.assert_allclose(P, g.cov, atol=1e-10)
        np.testing.assert_allclose(Pxg, g.cov, atol=1e-10)

    @pytest.mark.parametrize("params", [DEFAULT_UT,
                                        UtParams(0.9, 2.0, 1.0),
                                        UtParams(0.5, 0.0, 3.0)])
    def test_affine_function_exact(self, params):
        rng = np.random.default_rng(18)
        g = random_gaussian(rng, 3)
        A = rng.normal(size=(2, 3))
        b = rng.normal(size=2)
        m, P, Pxg = unscented_transform(g.mean, g.cov, lambda x: A @ x + b, params)
        scale = max(1.0, float(np.max(np.abs(g.cov))))
        np.testing.assert_allclose(m, A @ g.mean + b, atol=1e-9 * scale)
        np.testing.assert_allclose(P, A @ g.cov @ A.T, atol=1e-9 * scale)
        np.testing.assert_allclose(Pxg, g.cov @ A.T, atol=1e-9 * scale)

    def test_mean_weights_sum_to_one(self):
        for n in (1, 2, 5):
            _, wm, _ = ut_weights(n)
            assert math.fsum(wm) == pytest.approx(1.0, abs=1e-15)


class TestNonlinearSteps:
    def test_linear_model_matches_kf(self):
        rng = np.random.default_rng(20)
        for _ in range(10):
            lm = random_linear_model(rng)
            nl = NonlinearModel(f=lambda x, A=lm.A: A @ x,
                                h=lambda x, C=lm.C: C @ x,
                                Q=lm.Q, R=lm.R,
                                jac_f=lambda x, A=lm.A: A,
                                jac_h=lambda x, C=lm.C: C)
            prior = random_gaussian(rng)
            y = rng.normal(size=lm.C.shape[0])
            kf_post, _ = kf_correct(kf_predict(prior, lm), y, lm)
            ekf_post = ekf_step(prior, y, nl)
            ukf_post = ukf_step(prior, y, nl)
            scale = max(1.0, float(np.max(np.abs(kf_post.cov))))
            np.testing.assert_allclose(ekf_post.mean, kf_post.mean, atol=1e-8 * scale)
            np.testing.assert_allclose(ekf_post.cov, kf_post.cov, atol=1e-8 * scale)
            np.testing.assert_allclose(ukf_post.mean, kf_post.mean, atol=1e-8 * scale)
            np.testing.assert_allclose(ukf_post.cov, kf_post.cov, atol=1e-8 * scale)

    def test_bearing_jacobian_matches_finite_differences(self):
        sensor = SensorModel(kind="doa", position=(100.0, -50.0), sigma_bearing_deg=1.0)
        x = np.array([400.0, 10.0, 300.0, -5.0])
        dx = x[0] - 100.0
        dy = x[2] + 50.0
        rho2 = dx * dx + dy * dy
        analytic = np.array([[-dy / rho2, 0.0, dx / rho2, 0.0]])
        numeric = numerical_jacobian(sensor.h, x)
        np.testing.assert_allclose(numeric, analytic, rtol=1e-5, atol=1e-12)

    def test_range_measurement_reduces_uncertainty(self):
        sensor = SensorModel(kind="toa", position=(0.0, 0.0), sigma_range=50.0)
        prior = Gaussian(np.array([2000.0, 5.0, 1000.0, -3.0]),
                         np.diag([1e4, 100.0, 1e4, 100.0]))
        model = NonlinearModel(f=lambda x: x, h=sensor.h,
                               Q=np.zeros((4, 4)), R=sensor.noise_cov())
        y = sensor.h(prior.mean) + 10.0
        post = ukf_step(prior, y, model)
        assert np.trace(post.cov) < np.trace(prior.cov)

    def test_posterior_covariance_psd(self):
        rng = np.random.default_rng(22)
        for _ in range(10):
            lm = random_linear_model(rng)
            nl = NonlinearModel(f=lambda x, A=lm.A: A @ x,
                                h=lambda x, C=lm.C: C @ x, Q=lm.Q, R=lm.R)
            post = ukf_step(random_gaussian(rng), rng.normal(size=lm.C.shape[0]), nl)
            assert np.min(np.linalg.eigvalsh(post.cov)) > -1e-9
