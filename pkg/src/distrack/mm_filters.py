"""Jump-Markov multiple-model filters.

GPB1 and IMM steps over a bank of mode-matched filters, plus the
probability-vector fusion operators used when mode beliefs are exchanged
over a network. Mode likelihoods are handled in the log domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gaussian import Gaussian, GaussianMixture
from .kalman import DEFAULT_UT, UtParams, measurement_correct, motion_predict


@dataclass(frozen=True)
class JumpMarkovModel:
    """Mode bank with Markov switching.

    jump[j, t] is the probability of switching to mode j given mode t, so
    every column sums to one. Each mode carries its own motion/measurement
    model (LinearModel or NonlinearModel).
    """

    modes: tuple
    jump: np.ndarray
    linearization: str = "ut"
    ut_params: UtParams = field(default_factory=UtParams)

    def __post_init__(self):
        jump = np.atleast_2d(np.asarray(self.jump, dtype=float))
        n = len(self.modes)
        if jump.shape != (n, n):
            raise ValueError("jump matrix shape must match the number of modes")
        if np.any(jump < 0.0) or not np.allclose(jump.sum(axis=0), 1.0, atol=1e-9):
            raise ValueError("jump matrix columns must be probability vectors")
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "jump", jump)

    @property
    def n_modes(self) -> int:
        return len(self.modes)


@dataclass(frozen=True)
class ModeBank:
    """Per-mode conditional pdfs and the mode probability vector."""

    mode_pdfs: tuple
    mu: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if len(self.mode_pdfs) != mu.shape[0]:
            raise ValueError("one pdf per mode required")
        if np.any(mu < 0.0) or abs(float(mu.sum()) - 1.0) > 1e-9:
            raise ValueError("mode probabilities must lie on the simplex")
        object.__setattr__(self, "mode_pdfs", tuple(self.mode_pdfs))
        object.__setattr__(self, "mu", mu)

    @property
    def n_modes(self) -> int:
        return len(self.mode_pdfs)


def moment_match_modes(pdfs: Sequence[Gaussian], mu) -> Gaussian:
    """Collapse mode-conditioned Gaussians into one Gaussian."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    gm = GaussianMixture(tuple((float(m), g) for m, g in zip(mu, pdfs) if m > 0.0))
    return gm.moment_match()


def bank_fused(bank: ModeBank) -> Gaussian:
    return moment_match_modes(bank.mode_pdfs, bank.mu)


def _normalize_log_weights(logw: np.ndarray) -> np.ndarray:
    finite = np.isfinite(logw)
    if not np.any(finite):
        raise ValueError("degenerate mode update")
    shifted = logw - np.max(logw[finite])
    w = np.where(finite, np.exp(shifted, where=finite, out=np.zeros_like(shifted)), 0.0)
    tot = float(w.sum())
    if tot <= 0.0:
        raise ValueError("degenerate mode update")
    return w / tot


def _mode_correct(pred: Gaussian, y, mode_model, linearization: str, params: UtParams):
    if y is None:
        return pred, 0.0
    post, _, loglik = measurement_correct(pred, y, mode_model, mode=linearization, params=params)
    return post, loglik


def gpb1_step(bank: ModeBank, y, model: JumpMarkovModel):
    """One GPB1 cycle: predict per mode, correct, fuse, re-initialize.

    Returns the new bank (all mode pdfs equal to the fused Gaussian) and
    the fused output Gaussian. y may be None to skip the correction.
    """
    mu_pred = model.jump @ bank.mu
    posts = []
    logw = np.empty(model.n_modes)
    for j in range(model.n_modes):
        pred = motion_predict(bank.mode_pdfs[j], model.modes[j],
                              mode=model.linearization, params=model.ut_params)
        post, loglik = _mode_correct(pred, y, model.modes[j], model.linearization, model.ut_params)
        posts.append(post)
        logw[j] = loglik + (math.log(mu_pred[j]) if mu_pred[j] > 0.0 else -math.inf)
    mu = _normalize_log_weights(logw)
    fused = moment_match_modes(posts, mu)
    new_bank = ModeBank(mode_pdfs=(fused,) * model.n_modes, mu=mu)
    return new_bank, fused


def imm_step(bank: ModeBank, y, model: JumpMarkovModel):
    """One IMM cycle: mix, predict per mode, correct, update mode weights.

    Returns the new bank (per-mode posteriors) and the moment-matched
    output Gaussian. y may be None to skip the correction.
    """
    n = model.n_modes
    c = model.jump @ bank.mu
    posts = []
    logw = np.empty(n)
    for j in range(n):
        if c[j] > 0.0:
            mix_w = model.jump[j, :] * bank.mu / c[j]
            mixed = moment_match_modes(bank.mode_pdfs, mix_w)
        else:
            mixed = bank.mode_pdfs[j]
        pred = motion_predict(mixed, model.modes[j],
                              mode=model.linearization, params=model.ut_params)
        post, loglik = _mode_correct(pred, y, model.modes[j], model.linearization, model.ut_params)
        posts.append(post)
        logw[j] = loglik + (math.log(c[j]) if c[j] > 0.0 else -math.inf)
    mu = _normalize_log_weights(logw)
    fused = moment_match_modes(posts, mu)
    return ModeBank(mode_pdfs=tuple(posts), mu=mu), fused


def pmf_power(pmf, omega: float) -> np.ndarray:
    """Normalized elementwise power of a probability vector."""
    if omega <= 0.0:
        raise ValueError("pmf exponent must be positive")
    p = np.atleast_1d(np.asarray(pmf, dtype=float))
    out = np.where(p > 0.0, np.power(p, omega, where=p > 0.0, out=np.zeros_like(p)), 0.0)
    tot = float(out.sum())
    if tot <= 0.0:
        raise ValueError("probability fusion produced an all-zero vector")
    return out / tot


def pmf_product(*pmfs) -> np.ndarray:
    """Normalized elementwise product of probability vectors."""
    arrs = [np.atleast_1d(np.asarray(p, dtype=float)) for p in pmfs]
    out = arrs[0].copy()
    for p in arrs[1:]:
        out = out * p
    tot = float(out.sum())
    if tot <= 0.0:
        raise ValueError("probability fusion produced an all-zero vector")
    return out / tot


def pmf_kla(pmfs: Sequence, weights) -> np.ndarray:
    """Normalized weighted geometric mean of probability vectors.

    Bins where any positively-weighted input is zero fuse to zero; an
    all-zero result raises.
    """
    pmfs = [np.atleast_1d(np.asarray(p, dtype=float)) for p in pmfs]
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    if len(pmfs) != w.shape[0]:
        raise ValueError("one weight per pmf required")
    if np.any(w < 0.0):
        raise ValueError("pmf fusion weights must be nonnegative")
    size = pmfs[0].shape[0]
    log_out = np.zeros(size)
    for wi, p in zip(w, pmfs):
        if wi == 0.0:
            continue
        if p.shape[0] != size:
            raise ValueError("pmf sizes must agree")
        with np.errstate(divide="ignore"):
            log_out = log_out + wi * np.log(p)
    if not np.any(np.isfinite(log_out)):
        raise ValueError("probability fusion produced an all-zero vector")
    shifted = log_out - np.max(log_out[np.isfinite(log_out)])
    out = np.where(np.isfinite(shifted), np.exp(shifted), 0.0)
    return out / float(out.sum())
