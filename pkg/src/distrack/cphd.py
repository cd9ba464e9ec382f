"""Gaussian-mixture CPHD filtering and its consensus variant.

The corrector uses elementary symmetric functions over the per-measurement
detection ratios; clutter enters only through its intensity kappa, so the
Poisson clutter constants cancel. Fusion is the normalized weighted
geometric mean of the location pdfs paired with the cardinality rule that
reweights counts by the location-fusion normalizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .gaussian import Gaussian, GaussianMixture, gm_kla, merge, prune, truncate
from .kalman import DEFAULT_UT, UtParams, measurement_correct, motion_predict
from .network_consensus import ConsensusWeights, NetworkGraph
from .rfs_core import CardinalityPmf


@dataclass(frozen=True)
class CphdState:
    cardinality: CardinalityPmf
    intensity: GaussianMixture


@dataclass(frozen=True)
class CphdModel:
    """Everything one node needs to run the filter.

    measurement may be None for nodes that never correct. kappa is the
    clutter intensity (rate times uniform density over the observation
    region) evaluated anywhere inside the region.
    """

    motion: object
    birth_cardinality: np.ndarray
    birth_intensity: GaussianMixture
    p_survive: float
    p_detect: float = 1.0
    measurement: object = None
    kappa: float = 0.0
    linearization: str = "ut"
    ut_params: UtParams = field(default_factory=UtParams)

    def __post_init__(self):
        pb = np.atleast_1d(np.asarray(self.birth_cardinality, dtype=float))
        if np.any(pb < 0.0) or abs(float(pb.sum()) - 1.0) > 1e-9:
            raise ValueError("birth cardinality must be a probability vector")
        object.__setattr__(self, "birth_cardinality", pb)


@dataclass(frozen=True)
class GmThresholds:
    """Housekeeping knobs for Gaussian-mixture pipelines."""

    gamma_t: float = 1e-4
    gamma_m: float = 4.0
    n_comp_max: int = 25
    gamma_e: float = 0.5


def cphd_predict(state: CphdState, model: CphdModel) -> CphdState:
    """Survival-thinned cardinality convolved with births; intensity is the
    per-component prediction scaled by the survival probability plus the
    birth mixture."""
    rho = state.cardinality.rho
    n_max = state.cardinality.n_max
    ps = model.p_survive
    surv = np.zeros(n_max + 1)
    for j in range(n_max + 1):
        acc = 0.0
        for n in range(j, n_max + 1):
            acc += math.comb(n, j) * ps ** j * (1.0 - ps) ** (n - j) * rho[n]
        surv[j] = acc
    pred_rho = np.convolve(model.birth_cardinality, surv)[: n_max + 1]
    tot = float(pred_rho.sum())
    if tot <= 0.0:
        raise ValueError("predicted cardinality lost all mass")
    comps = []
    for w, g in state.intensity.components:
        comps.append((w * ps, motion_predict(g, model.motion,
                                             mode=model.linearization,
                                             params=model.ut_params)))
    comps.extend(model.birth_intensity.components)
    return CphdState(CardinalityPmf(pred_rho / tot), GaussianMixture(tuple(comps)))


def _detection_terms(intensity: GaussianMixture, Y, model: CphdModel, kappa: float):
    """Per-measurement log ratios and updated components.

    Returns (lam, upd) where lam[j] integrates the detection likelihood of
    measurement j against the normalized location pdf scaled by p_detect/kappa,
    and upd[j] lists (normalized weight contribution, posterior Gaussian)
    per prior component.
    """
    mu = intensity.total_weight()
    lam = np.zeros(len(Y))
    upd = []
    for j, y in enumerate(Y):
        rows = []
        total = 0.0
        for w, g in intensity.components:
            post, _, loglik = measurement_correct(g, y, model.measurement,
                                                  mode=model.linearization,
                                                  params=model.ut_params)
            q = math.exp(loglik)
            rows.append(((w / mu) * q, post))
            total += (w / mu) * q
        lam[j] = model.p_detect * total / kappa
        upd.append(rows)
    return lam, upd


def _esf(values: np.ndarray) -> np.ndarray:
    """Elementary symmetric functions e_0..e_m of the given values."""
    esf = np.array([1.0])
    for v in values:
        esf = np.convolve(esf, np.array([1.0, float(v)]))
    return esf


def _upsilons(rho_len: int, p_detect: float, esf: np.ndarray):
    """Upsilon^0(n) and Upsilon^1(n) for n = 0..rho_len-1.

    Upsilon^u(n) = sum_j (falling factorial n over j+u) (1-P_D)^(n-j-u) e_j.
    """
    qd = 1.0 - p_detect
    u0 = np.zeros(rho_len)
    u1 = np.zeros(rho_len)
    m = esf.shape[0] - 1
    for n in range(rho_len):
        acc0 = 0.0
        acc1 = 0.0
        for j in range(0, min(m, n) + 1):
            ff = _falling(n, j)
            acc0 += ff * qd ** (n - j) * esf[j]
            if j <= n - 1:
                acc1 += _falling(n, j + 1) * qd ** (n - j - 1) * esf[j]
        u0[n] = acc0
        u1[n] = acc1
    return u0, u1


def _falling(n: int, j: int) -> float:
    out = 1.0
    for t in range(j):
        out *= n - t
    return out


def cphd_correct(state: CphdState, Y: Sequence, model: CphdModel) -> CphdState:
    """Measurement update; Y may be empty (pure missed-detection update)."""
    if model.measurement is None:
        raise ValueError("correction requires a measurement model")
    rho = state.cardinality.rho
    intensity = state.intensity
    mu = intensity.total_weight()
    Y = list(Y)
    if mu <= 0.0:
        # nothing to detect: counts can only be downweighted by misses
        qd = 1.0 - model.p_detect
        u0 = qd ** np.arange(rho.shape[0])
        post_rho = rho * u0
        tot = float(post_rho.sum())
        return CphdState(CardinalityPmf(post_rho / tot), intensity)
    if model.kappa <= 0.0 and Y:
        return _zero_clutter_correct(state, Y, model)
    lam, upd = _detection_terms(intensity, Y, model, model.kappa)
    esf_full = _esf(lam)
    u0, u1 = _upsilons(rho.shape[0], model.p_detect, esf_full)
    denom = float(rho @ u0)
    if denom <= 0.0:
        raise ValueError("degenerate cardinality update")
    post_rho = rho * u0 / denom
    post_rho = post_rho / float(post_rho.sum())
    comps = []
    coef_miss = float(rho @ u1) / denom
    qd = 1.0 - model.p_detect
    for w, g in intensity.components:
        comps.append((coef_miss * qd * (w / mu), g))
    for j in range(len(Y)):
        esf_wo = _esf(np.delete(lam, j))
        _, u1_wo = _upsilons(rho.shape[0], model.p_detect, esf_wo)
        coef_j = float(rho @ u1_wo) / denom
        # group mass for measurement j works out to coef_j * lam[j]
        for contrib, post in upd[j]:
            comps.append((coef_j * model.p_detect / model.kappa * contrib, post))
    return CphdState(CardinalityPmf(post_rho), GaussianMixture(tuple(comps)))


def _leading_term(n: int, m: int, qd: float, e: np.ndarray, shift: int):
    """Leading (degree, coefficient) in 1/kappa of Upsilon^shift(n).

    With kappa factored out of the ESF inputs, the j-th term carries
    kappa^(-j); the kappa -> 0 limit keeps the largest j whose term is
    nonzero. Returns None when every term vanishes.
    """
    top = min(n - shift, m)
    for j in range(top, -1, -1):
        c = _falling(n, j + shift) * qd ** (n - j - shift) * float(e[j])
        if c > 0.0:
            return j, c
    return None


def _zero_clutter_correct(state: CphdState, Y: Sequence, model: CphdModel) -> CphdState:
    """Exact kappa -> 0 limit of the correction.

    Every ratio in the update is a quotient of polynomials in 1/kappa; the
    limit is the quotient of the leading coefficients at the degree set by
    the normalizer rho . Upsilon^0. Detection counts concentrate on the
    largest number of measurements the prior can explain.
    """
    rho = state.cardinality.rho
    intensity = state.intensity
    mu = intensity.total_weight()
    lam, upd = _detection_terms(intensity, Y, model, 1.0)
    e = _esf(lam)
    m = len(Y)
    qd = 1.0 - model.p_detect
    n_len = rho.shape[0]
    lead0 = [_leading_term(n, m, qd, e, 0) for n in range(n_len)]
    deg_max = -1
    for n in range(n_len):
        if rho[n] > 0.0 and lead0[n] is not None:
            deg_max = max(deg_max, lead0[n][0])
    if deg_max < 0:
        raise ValueError("degenerate cardinality update")
    denom = math.fsum(rho[n] * lead0[n][1] for n in range(n_len)
                      if rho[n] > 0.0 and lead0[n] is not None
                      and lead0[n][0] == deg_max)
    post_rho = np.zeros(n_len)
    for n in range(n_len):
        if rho[n] > 0.0 and lead0[n] is not None and lead0[n][0] == deg_max:
            post_rho[n] = rho[n] * lead0[n][1]
    post_rho = post_rho / float(post_rho.sum())
    comps = []
    if qd > 0.0:
        lead1 = [_leading_term(n, m, qd, e, 1) for n in range(n_len)]
        num_miss = math.fsum(rho[n] * lead1[n][1] for n in range(n_len)
                             if rho[n] > 0.0 and lead1[n] is not None
                             and lead1[n][0] == deg_max)
        coef_miss = num_miss / denom
        for w, g in intensity.components:
            comps.append((coef_miss * qd * (w / mu), g))
    for j in range(m):
        if lam[j] == 0.0:
            continue
        e_wo = _esf(np.delete(lam, j))
        lead1_wo = [_leading_term(n, m - 1, qd, e_wo, 1) for n in range(n_len)]
        num_j = math.fsum(rho[n] * lead1_wo[n][1] for n in range(n_len)
                          if rho[n] > 0.0 and lead1_wo[n] is not None
                          and lead1_wo[n][0] + 1 == deg_max)
        coef_j = num_j / denom
        if coef_j == 0.0:
            continue
        for contrib, post in upd[j]:
            comps.append((coef_j * model.p_detect * contrib, post))
    return CphdState(CardinalityPmf(post_rho), GaussianMixture(tuple(comps)))


def cphd_extract(state: CphdState, gamma_e: float = 0.5):
    """Map estimate of the count, then the strongest component means.

    Takes the argmax-count top-weight components whose normalized weight
    times the count estimate clears gamma_e.
    """
    n_hat = state.cardinality.map_estimate()
    if n_hat == 0 or len(state.intensity) == 0:
        return []
    mu = state.intensity.total_weight()
    if mu <= 0.0:
        return []
    order = np.argsort(-state.intensity.weights, kind="stable")[:n_hat]
    out = []
    for i in order:
        w, g = state.intensity.components[int(i)]
        if (w / mu) * n_hat > gamma_e:
            out.append(g.mean.copy())
    return out


def cphd_gci_fuse(states: Sequence[CphdState], weights) -> CphdState:
    """Weighted geometric-mean fusion of CPHD posteriors.

    Location pdfs fuse by chained pairwise covariance intersection; counts
    fuse bin-wise with the location normalizer raised to the count.
    """
    states = list(states)
    if not states:
        raise ValueError("nothing to fuse")
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    if len(states) == 1:
        return states[0]
    locs = [s.intensity.normalized() for s in states]
    fused_loc, log_z = gm_kla(locs, w)
    # chained pairwise fusion overestimates the normalizer once components
    # overlap, but for normalized inputs the true value obeys
    # int prod s^w <= 1 (Hoelder), so enforce the bound before it feeds the
    # per-count tilt z**n below
    log_z = min(log_z, 0.0)
    n_max = min(s.cardinality.n_max for s in states)
    counts = np.arange(n_max + 1)
    log_rho = counts * log_z
    for wi, s in zip(w, states):
        if wi == 0.0:
            continue
        with np.errstate(divide="ignore"):
            log_rho = log_rho + wi * np.log(s.cardinality.rho[: n_max + 1])
    if not np.any(np.isfinite(log_rho)):
        raise ValueError("cardinality fusion produced an all-zero vector")
    shifted = log_rho - np.max(log_rho[np.isfinite(log_rho)])
    rho = np.where(np.isfinite(shifted), np.exp(shifted), 0.0)
    card = CardinalityPmf(rho / float(rho.sum()))
    return CphdState(card, fused_loc.scaled(card.mean()))


def _housekeep(gm: GaussianMixture, thresholds: GmThresholds) -> GaussianMixture:
    out = truncate(gm, thresholds.gamma_t)
    if len(out) == 0:
        return out
    return merge(out, thresholds.gamma_m)


def cgm_cphd_node_step(states: Sequence[CphdState], measurements: Sequence,
                       models: Sequence[CphdModel], graph: NetworkGraph,
                       weights: ConsensusWeights, consensus_steps: int,
                       thresholds: GmThresholds = GmThresholds()):
    """One full distributed CPHD cycle for every node.

    Local predict and correct (measurements[i] is None at nodes without a
    sensor), mixture housekeeping with a component cap, then
    `consensus_steps` rounds of regional geometric-mean fusion over each
    in-neighborhood, capped again after every round so the pairwise products
    cannot snowball. Single-node regions pass through untouched, which keeps
    the one-node network identical to the centralized filter.
    """
    n = len(states)
    locals_ = []
    for i in range(n):
        pred = cphd_predict(states[i], models[i])
        if measurements[i] is None:
            post = pred
        else:
            post = cphd_correct(pred, measurements[i], models[i])
        kept = prune(_housekeep(post.intensity, thresholds), thresholds.n_comp_max)
        locals_.append(CphdState(post.cardinality, kept))
    cur = locals_
    for _ in range(consensus_steps):
        nxt = []
        for i in range(n):
            region = graph.in_neighbors(i)
            if len(region) == 1:
                nxt.append(cur[i])
                continue
            fused = cphd_gci_fuse([cur[j] for j in region],
                                  [weights.pi[i, j] for j in region])
            nxt.append(CphdState(fused.cardinality,
                                 prune(_housekeep(fused.intensity, thresholds),
                                       thresholds.n_comp_max)))
        cur = nxt
    out = []
    for s in cur:
        out.append(CphdState(s.cardinality, prune(s.intensity, thresholds.n_comp_max)))
    return out
