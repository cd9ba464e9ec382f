"""Sensor-network graphs, consensus weighting, and distributed filter steps.

Arcs are directed (from, to) pairs; a node's in-neighborhood always
includes itself. Metropolis weights give a row-stochastic matrix that is
doubly stochastic when the arc set is symmetric.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .gaussian import Gaussian, InformationPair, inv_psd, solve_psd, symmetrize
from .kalman import (
    DEFAULT_UT,
    LinearModel,
    NonlinearModel,
    UtParams,
    info_delta,
    measurement_correct,
    motion_predict,
    numerical_jacobian,
    unscented_transform,
)
from .mm_filters import JumpMarkovModel, ModeBank, _normalize_log_weights, _mode_correct, moment_match_modes, pmf_kla

SENSOR = "sensor"
COMMUNICATION = "communication"


@dataclass(frozen=True)
class NetworkGraph:
    """Directed network with sensor and communication nodes."""

    roles: tuple
    arcs: tuple

    def __post_init__(self):
        roles = tuple(self.roles)
        for r in roles:
            if r not in (SENSOR, COMMUNICATION):
                raise ValueError(f"unknown node role {r!r}")
        arcs = []
        n = len(roles)
        for a, b in self.arcs:
            a, b = int(a), int(b)
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError("arc endpoint out of range")
            if a != b and (a, b) not in arcs:
                arcs.append((a, b))
        object.__setattr__(self, "roles", roles)
        object.__setattr__(self, "arcs", tuple(sorted(arcs)))

    @property
    def n_nodes(self) -> int:
        return len(self.roles)

    def in_neighbors(self, i: int) -> tuple:
        """Nodes whose values node i receives, self included."""
        nbrs = {i}
        for a, b in self.arcs:
            if b == i:
                nbrs.add(a)
        return tuple(sorted(nbrs))

    def is_symmetric(self) -> bool:
        arcset = set(self.arcs)
        return all((b, a) in arcset for a, b in arcset)

    def sensor_nodes(self) -> tuple:
        return tuple(i for i, r in enumerate(self.roles) if r == SENSOR)


def symmetric_arcs(links) -> tuple:
    """Expand undirected links into symmetric arc pairs."""
    arcs = []
    for a, b in links:
        arcs.append((int(a), int(b)))
        arcs.append((int(b), int(a)))
    return tuple(arcs)


@dataclass(frozen=True)
class ConsensusWeights:
    """Row-stochastic consensus matrix; pi[i, j] weighs node j's value at node i."""

    pi: np.ndarray
    doubly_stochastic: bool = True

    def __post_init__(self):
        pi = np.atleast_2d(np.asarray(self.pi, dtype=float))
        if pi.shape[0] != pi.shape[1]:
            raise ValueError("consensus matrix must be square")
        if np.any(pi < -1e-12) or not np.allclose(pi.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("consensus matrix rows must be probability vectors")
        object.__setattr__(self, "pi", pi)

    @property
    def n_nodes(self) -> int:
        return self.pi.shape[0]


def metropolis_weights(graph: NetworkGraph) -> ConsensusWeights:
    """Metropolis weights from neighborhood sizes (self included).

    Off-diagonal entries are 1 / (1 + max(|N_i|, |N_j|)); the diagonal
    completes each row. Asymmetric arc sets trigger a warning because the
    result is then only row stochastic.
    """
    n = graph.n_nodes
    sizes = [len(graph.in_neighbors(i)) for i in range(n)]
    pi = np.zeros((n, n))
    for i in range(n):
        for j in graph.in_neighbors(i):
            if j == i:
                continue
            pi[i, j] = 1.0 / (1.0 + max(sizes[i], sizes[j]))
        pi[i, i] = 1.0 - pi[i].sum()
    symmetric = graph.is_symmetric()
    if not symmetric:
        warnings.warn("asymmetric arc set: consensus matrix is not doubly stochastic",
                      stacklevel=2)
    return ConsensusWeights(pi=pi, doubly_stochastic=symmetric)


def consensus_average(values, weights: ConsensusWeights, steps: int) -> np.ndarray:
    """Apply `steps` rounds of the linear consensus recursion to row-stacked values."""
    if steps < 0:
        raise ValueError("consensus step count must be nonnegative")
    out = np.asarray(values, dtype=float).copy()
    for _ in range(steps):
        out = np.tensordot(weights.pi, out, axes=(1, 0))
    return out


def _info_consensus(infos, weights: ConsensusWeights, steps: int):
    omegas = np.stack([p.omega for p in infos])
    qs = np.stack([p.q for p in infos])
    omegas = consensus_average(omegas, weights, steps)
    qs = consensus_average(qs, weights, steps)
    return [InformationPair(om, q) for om, q in zip(omegas, qs)]


def cp_step(node_states: Sequence[Gaussian], measurements: Sequence, models: Sequence,
            weights: ConsensusWeights, steps: int,
            mode: str = "ut", params: UtParams = DEFAULT_UT):
    """Consensus on posteriors: local predict/correct, then average the
    posterior information pairs. measurements[i] is None for nodes with
    nothing to process this step (communication nodes, missed detections)."""
    n = len(node_states)
    posts = []
    for i in range(n):
        pred = motion_predict(node_states[i], models[i], mode=mode, params=params)
        if measurements[i] is None:
            posts.append(pred)
        else:
            post, _, _ = measurement_correct(pred, measurements[i], models[i],
                                             mode=mode, params=params)
            posts.append(post)
    infos = _info_consensus([p.to_info() for p in posts], weights, steps)
    return [p.to_gaussian() for p in infos]


def _measurement_linearization(pred: Gaussian, y, model, mode: str, params: UtParams):
    """(C, R, ybar) for the information-form correction.

    Nonlinear sensors are linearized statistically: C = P_xy' (P^-)^{-1}
    from the unscented transform, and the pseudo-measurement is
    ybar = y - yhat + C xhat^-.
    """
    if isinstance(model, LinearModel):
        return model.C, model.R, np.atleast_1d(np.asarray(y, dtype=float))
    if mode == "jacobian":
        C = model.jac_h(pred.mean) if model.jac_h is not None else numerical_jacobian(model.h, pred.mean)
        C = np.atleast_2d(np.asarray(C, dtype=float))
        yhat = np.atleast_1d(np.asarray(model.h(pred.mean), dtype=float))
    else:
        yhat, _, P_xg = unscented_transform(pred.mean, pred.cov, model.h, params)
        C = solve_psd(pred.cov, P_xg).T
    if model.residual is not None:
        e = np.atleast_1d(np.asarray(model.residual(y, yhat), dtype=float))
    else:
        e = np.atleast_1d(np.asarray(y, dtype=float)) - yhat
    return C, model.R, e + C @ pred.mean


def clcp_step(node_states: Sequence[Gaussian], measurements: Sequence, models: Sequence,
              weights: ConsensusWeights, steps: int,
              rho_strategy: str = "sensor_fraction",
              mode: str = "ut", params: UtParams = DEFAULT_UT):
    """Consensus on likelihoods and priors with correction-gain reweighting.

    Runs parallel consensus on the measurement information contributions
    (zero at non-measuring nodes) and on the predicted information pairs,
    then corrects with the strategy-dependent scale factor rho.
    """
    n = len(node_states)
    preds = [motion_predict(node_states[i], models[i], mode=mode, params=params)
             for i in range(n)]
    prior_infos = [p.to_info() for p in preds]
    dim = preds[0].dim
    deltas = []
    for i in range(n):
        if measurements[i] is None:
            deltas.append(InformationPair(np.zeros((dim, dim)), np.zeros(dim)))
        else:
            C, R, ybar = _measurement_linearization(preds[i], measurements[i], models[i], mode, params)
            d_omega, d_q = info_delta(ybar, C, R)
            deltas.append(InformationPair(d_omega, d_q))
    prior_l = _info_consensus(prior_infos, weights, steps)
    delta_l = _info_consensus(deltas, weights, steps)
    rho = _rho_factors(rho_strategy, measurements, weights, steps)
    out = []
    for i in range(n):
        omega = prior_l[i].omega + rho[i] * delta_l[i].omega
        q = prior_l[i].q + rho[i] * delta_l[i].q
        out.append(InformationPair(omega, q).to_gaussian())
    return out


def _rho_factors(strategy: str, measurements, weights: ConsensusWeights, steps: int):
    n = weights.n_nodes
    active = np.array([m is not None for m in measurements], dtype=float)
    if strategy == "network_size":
        return np.full(n, float(n))
    if strategy == "sensor_fraction":
        b = consensus_average(active, weights, steps)
        return np.where(b > 0.0, 1.0 / np.where(b > 0.0, b, 1.0), 1.0)
    if strategy == "min_inverse_weight":
        pi_l = np.linalg.matrix_power(weights.pi, steps)
        rho = np.ones(n)
        for i in range(n):
            reachable = [pi_l[i, j] for j in range(n) if active[j] and pi_l[i, j] > 0.0]
            if reachable:
                rho[i] = 1.0 / max(reachable)
        return rho
    raise ValueError(f"unknown rho strategy {strategy!r}")


def _node_models(models, n):
    if isinstance(models, JumpMarkovModel):
        return [models] * n
    models = list(models)
    if len(models) != n:
        raise ValueError("one jump-Markov model per node required")
    if len({m.n_modes for m in models}) != 1:
        raise ValueError("nodes must share the mode count")
    return models


def dgpb1_step(banks: Sequence[ModeBank], measurements: Sequence,
               models, weights: ConsensusWeights, steps: int):
    """Distributed GPB1: local mode-matched cycle, consensus on the mode
    probability vectors and on the fused information pairs, then
    re-initialization of every mode with the consensus Gaussian.

    models is one JumpMarkovModel per node (or a single shared one); nodes
    share motion modes and jump matrix but may differ in sensors."""
    n = len(banks)
    models = _node_models(models, n)
    fused_infos = []
    mus = []
    for i in range(n):
        model = models[i]
        mu_pred = model.jump @ banks[i].mu
        posts = []
        logw = np.empty(model.n_modes)
        for j in range(model.n_modes):
            pred = motion_predict(banks[i].mode_pdfs[j], model.modes[j],
                                  mode=model.linearization, params=model.ut_params)
            post, loglik = _mode_correct(pred, measurements[i], model.modes[j],
                                         model.linearization, model.ut_params)
            posts.append(post)
            logw[j] = loglik + (math.log(mu_pred[j]) if mu_pred[j] > 0.0 else -math.inf)
        mu = _normalize_log_weights(logw)
        fused_infos.append(moment_match_modes(posts, mu).to_info())
        mus.append(mu)
    mus = _pmf_consensus(mus, weights, steps)
    fused_infos = _info_consensus(fused_infos, weights, steps)
    out = []
    for i in range(n):
        fused = fused_infos[i].to_gaussian()
        out.append(ModeBank(mode_pdfs=(fused,) * models[i].n_modes, mu=mus[i]))
    return out


def dimm_step(banks: Sequence[ModeBank], measurements: Sequence,
              models, weights: ConsensusWeights, steps: int):
    """Distributed IMM: local mixing/prediction/correction per mode, then
    parallel consensus per mode on information pairs and on the mode
    probability vectors."""
    n = len(banks)
    models = _node_models(models, n)
    n_modes = models[0].n_modes
    mode_infos = [[None] * n for _ in range(n_modes)]
    mus = []
    for i in range(n):
        model = models[i]
        c = model.jump @ banks[i].mu
        logw = np.empty(n_modes)
        for j in range(n_modes):
            if c[j] > 0.0:
                mix_w = model.jump[j, :] * banks[i].mu / c[j]
                mixed = moment_match_modes(banks[i].mode_pdfs, mix_w)
            else:
                mixed = banks[i].mode_pdfs[j]
            pred = motion_predict(mixed, model.modes[j],
                                  mode=model.linearization, params=model.ut_params)
            post, loglik = _mode_correct(pred, measurements[i], model.modes[j],
                                         model.linearization, model.ut_params)
            mode_infos[j][i] = post.to_info()
            logw[j] = loglik + (math.log(c[j]) if c[j] > 0.0 else -math.inf)
        mus.append(_normalize_log_weights(logw))
    mus = _pmf_consensus(mus, weights, steps)
    for j in range(n_modes):
        mode_infos[j] = _info_consensus(mode_infos[j], weights, steps)
    out = []
    for i in range(n):
        pdfs = tuple(mode_infos[j][i].to_gaussian() for j in range(n_modes))
        out.append(ModeBank(mode_pdfs=pdfs, mu=mus[i]))
    return out


def _pmf_consensus(pmfs, weights: ConsensusWeights, steps: int):
    cur = [np.asarray(p, dtype=float) for p in pmfs]
    for _ in range(steps):
        cur = [pmf_kla(cur, weights.pi[i]) for i in range(weights.n_nodes)]
    return cur
