"""Single-object Bayesian filters.

Linear Kalman filter (covariance and information forms), the multi-sensor
stacked correction, extended and unscented variants, and the unscented
transform they share. Correction helpers also hand back the innovation pair
(e, S) so mode-matched banks can turn it into a likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import block_diag

from .gaussian import (
    Gaussian,
    InformationPair,
    chol_lower,
    gaussian_logpdf,
    solve_psd,
    symmetrize,
)


@dataclass(frozen=True)
class LinearModel:
    """x' = A x + w, y = C x + v with w ~ N(0,Q), v ~ N(0,R).

    C and R may be omitted for motion-only models.
    """

    A: np.ndarray
    Q: np.ndarray
    C: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "A", np.atleast_2d(np.asarray(self.A, dtype=float)))
        object.__setattr__(self, "Q", np.atleast_2d(np.asarray(self.Q, dtype=float)))
        if self.C is not None:
            object.__setattr__(self, "C", np.atleast_2d(np.asarray(self.C, dtype=float)))
        if self.R is not None:
            object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, dtype=float)))


@dataclass(frozen=True)
class NonlinearModel:
    """x' = f(x) + w, y = h(x) + v.

    Jacobians are optional; when absent they are computed by central
    differences with step 1e-6 * (1 + |x_i|). `residual` customizes the
    innovation y - h(x), e.g. for angle wrapping.
    """

    f: Callable
    h: Callable
    Q: np.ndarray
    R: np.ndarray
    jac_f: Optional[Callable] = None
    jac_h: Optional[Callable] = None
    residual: Optional[Callable] = None

    def __post_init__(self):
        object.__setattr__(self, "Q", np.atleast_2d(np.asarray(self.Q, dtype=float)))
        object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, dtype=float)))


@dataclass(frozen=True)
class MeasurementModel:
    """Measurement-only model y = h(x) + v for correction steps."""

    h: Callable
    R: np.ndarray
    jac_h: Optional[Callable] = None
    residual: Optional[Callable] = None

    def __post_init__(self):
        object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, dtype=float)))


@dataclass(frozen=True)
class UtParams:
    alpha_sigma: float = 1.0
    beta_sigma: float = 2.0
    kappa_sigma: float = 2.0


DEFAULT_UT = UtParams()


def _residual(model, y, yhat):
    res = getattr(model, "residual", None)
    if res is not None:
        return np.atleast_1d(np.asarray(res(y, yhat), dtype=float))
    return np.atleast_1d(np.asarray(y, dtype=float)) - np.atleast_1d(np.asarray(yhat, dtype=float))


def kf_predict(prior: Gaussian, model: LinearModel) -> Gaussian:
    mean = model.A @ prior.mean
    cov = symmetrize(model.A @ prior.cov @ model.A.T + model.Q)
    return Gaussian(mean, cov)


def kf_correct(pred: Gaussian, y, model: LinearModel):
    """Returns (posterior, innovation) where innovation packs (e, S)."""
    return _linear_correct(pred, y, model.C, model.R)


def _linear_correct(pred: Gaussian, y, C, R):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    yhat = C @ pred.mean
    S = symmetrize(C @ pred.cov @ C.T + R)
    e = y - yhat
    K = solve_psd(S, C @ pred.cov).T
    mean = pred.mean + K @ e
    cov = symmetrize(pred.cov - K @ S @ K.T)
    return Gaussian(mean, cov), Gaussian(e, S)


def mskf_correct(pred: Gaussian, measurements: Sequence):
    """Multi-sensor correction by stacking (y, C, R) triples.

    Equivalent to processing the sensors sequentially; the stacked
    innovation is returned with block-diagonal covariance.
    """
    measurements = list(measurements)
    if not measurements:
        return pred, None
    ys = [np.atleast_1d(np.asarray(y, dtype=float)) for y, _, _ in measurements]
    Cs = [np.atleast_2d(np.asarray(C, dtype=float)) for _, C, _ in measurements]
    Rs = [np.atleast_2d(np.asarray(R, dtype=float)) for _, _, R in measurements]
    return _linear_correct(pred, np.concatenate(ys), np.vstack(Cs), block_diag(*Rs))


def info_correct(info: InformationPair, y, C, R) -> InformationPair:
    """Information-form correction: add C'R^{-1}C and C'R^{-1}y."""
    d_omega, d_q = info_delta(y, C, R)
    return InformationPair(info.omega + d_omega, info.q + d_q)


def info_delta(y, C, R):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    Ri_C = solve_psd(R, C)
    return symmetrize(C.T @ Ri_C), C.T @ solve_psd(R, y)


def numerical_jacobian(fn: Callable, x: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian with per-coordinate step 1e-6*(1+|x_i|)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    f0 = np.atleast_1d(np.asarray(fn(x), dtype=float))
    J = np.zeros((f0.shape[0], x.shape[0]))
    for i in range(x.shape[0]):
        step = 1e-6 * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        fp = np.atleast_1d(np.asarray(fn(xp), dtype=float))
        fm = np.atleast_1d(np.asarray(fn(xm), dtype=float))
        J[:, i] = (fp - fm) / (2.0 * step)
    return J


def ut_weights(n: int, params: UtParams = DEFAULT_UT):
    """Sigma-point spread c, mean weights w_m and covariance weight matrix W_c."""
    a, b, k = params.alpha_sigma, params.beta_sigma, params.kappa_sigma
    varsigma = a * a * (n + k) - n
    c = a * a * (n + k)
    wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + varsigma)))
    wm[0] = varsigma / (n + varsigma)
    wc = wm.copy()
    wc[0] = varsigma / (n + varsigma) + (1.0 - a * a + b)
    centering = np.eye(2 * n + 1) - np.tile(wm[:, None], (1, 2 * n + 1))
    Wc = centering @ np.diag(wc) @ centering.T
    return c, wm, Wc


def unscented_transform(mean, cov, g: Callable, params: UtParams = DEFAULT_UT):
    """Propagate (mean, cov) through g.

    Returns the transformed mean, its covariance P_gg, and the
    cross-covariance P_xg between input and transformed sigma points.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    n = mean.shape[0]
    c, wm, Wc = ut_weights(n, params)
    L = chol_lower(cov)
    X = np.tile(mean[:, None], (1, 2 * n + 1))
    X[:, 1 : n + 1] += math.sqrt(c) * L
    X[:, n + 1 :] -= math.sqrt(c) * L
    cols = [np.atleast_1d(np.asarray(g(X[:, i]), dtype=float)) for i in range(2 * n + 1)]
    G = np.stack(cols, axis=1)
    m_prime = G @ wm
    P_gg = symmetrize(G @ Wc @ G.T)
    P_xg = X @ Wc @ G.T
    return m_prime, P_gg, P_xg


def motion_predict(prior: Gaussian, model, mode: str = "ut",
                   params: UtParams = DEFAULT_UT) -> Gaussian:
    """One-step prediction for linear or nonlinear motion."""
    if isinstance(model, LinearModel):
        return kf_predict(prior, model)
    if mode == "jacobian":
        A = model.jac_f(prior.mean) if model.jac_f is not None else numerical_jacobian(model.f, prior.mean)
        mean = np.atleast_1d(np.asarray(model.f(prior.mean), dtype=float))
        return Gaussian(mean, symmetrize(A @ prior.cov @ A.T + model.Q))
    m, P_ff, _ = unscented_transform(prior.mean, prior.cov, model.f, params)
    return Gaussian(m, symmetrize(P_ff + model.Q))


def measurement_correct(pred: Gaussian, y, model, mode: str = "ut",
                        params: UtParams = DEFAULT_UT):
    """Correction step for linear or nonlinear measurements.

    Returns (posterior, innovation, log_likelihood). The log likelihood is
    the innovation evaluated against N(0, S).
    """
    if isinstance(model, LinearModel):
        post, innov = kf_correct(pred, y, model)
    elif mode == "jacobian":
        C = model.jac_h(pred.mean) if model.jac_h is not None else numerical_jacobian(model.h, pred.mean)
        C = np.atleast_2d(np.asarray(C, dtype=float))
        yhat = np.atleast_1d(np.asarray(model.h(pred.mean), dtype=float))
        S = symmetrize(C @ pred.cov @ C.T + model.R)
        e = _residual(model, y, yhat)
        K = solve_psd(S, C @ pred.cov).T
        post = Gaussian(pred.mean + K @ e, symmetrize(pred.cov - K @ S @ K.T))
        innov = Gaussian(e, S)
    else:
        yhat, P_gg, P_xg = unscented_transform(pred.mean, pred.cov, model.h, params)
        S = symmetrize(P_gg + model.R)
        e = _residual(model, y, yhat)
        K = solve_psd(S, P_xg.T).T
        post = Gaussian(pred.mean + K @ e, symmetrize(pred.cov - K @ S @ K.T))
        innov = Gaussian(e, S)
    loglik = gaussian_logpdf(innov.mean, np.zeros(innov.dim), innov.cov)
    return post, innov, loglik


def ekf_step(prior: Gaussian, y, model: NonlinearModel) -> Gaussian:
    post, _ = ekf_step_detail(prior, y, model)
    return post


def ekf_step_detail(prior: Gaussian, y, model: NonlinearModel):
    pred = motion_predict(prior, model, mode="jacobian")
    post, innov, _ = measurement_correct(pred, y, model, mode="jacobian")
    return post, innov


def ukf_step(prior: Gaussian, y, model: NonlinearModel,
             params: UtParams = DEFAULT_UT) -> Gaussian:
    post, _ = ukf_step_detail(prior, y, model, params)
    return post


def ukf_step_detail(prior: Gaussian, y, model: NonlinearModel,
                    params: UtParams = DEFAULT_UT):
    pred = motion_predict(prior, model, mode="ut", params=params)
    post, innov, _ = measurement_correct(pred, y, model, mode="ut", params=params)
    return post, innov
