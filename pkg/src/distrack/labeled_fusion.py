"""Consensus fusion of labeled multi-object densities.

Weighted Kullback-Leibler averages of marginalized delta-GLMB and LMB
densities, plus the per-node predict / correct / fuse step used by the
distributed labeled trackers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .gaussian import _check_simplex, gm_kla
from .kalman import DEFAULT_UT, UtParams
from .labeled_rfs import (
    DEFAULT_CAPS,
    DeltaGlmb,
    GlmbCaps,
    Hypothesis,
    Lmb,
    LmbTrack,
    dglmb_housekeep,
    dglmb_predict,
    dglmb_update,
    lmb_housekeep,
    lmb_predict,
    lmb_update,
    mdglmb_marginalize,
)
from .network_consensus import NetworkGraph, ConsensusWeights

_EPS_WEIGHT = 1e-12


def mdglmb_kla(densities: Sequence[DeltaGlmb], weights) -> DeltaGlmb:
    """Normalized weighted geometric mean of marginalized delta-GLMBs.

    Fused weight per label set combines the agents' geometric-mean weight
    with the normalizers of the per-label density averages. Label sets
    absent from some agent are floored at a tiny weight so the union
    support survives; if the agents share no label set at all the average
    is meaningless and an error is raised.
    """
    ws = np.asarray(weights, dtype=float)
    _check_simplex(ws, len(densities))
    margs = [mdglmb_marginalize(d).normalized() for d in densities]
    supports = [{h.labels: h for h in m.hypotheses if h.weight > 0.0} for m in margs]
    common = set(supports[0])
    for s in supports[1:]:
        common &= set(s)
    if not common:
        raise ValueError("no common label sets")
    union = set().union(*supports)
    items = []
    for labels in sorted(union):
        per_agent = [s.get(labels) for s in supports]
        first = next(h for h in per_agent if h is not None)
        log_w = math.fsum(
            w * math.log(h.weight if h is not None else _EPS_WEIGHT)
            for w, h in zip(ws, per_agent))
        fused_densities = []
        for ell in labels:
            gms = [h.density(ell) if h is not None else first.density(ell)
                   for h in per_agent]
            fused, log_z = gm_kla(gms, ws)
            log_w += log_z
            fused_densities.append(fused)
        items.append((labels, log_w, tuple(fused_densities)))
    logs = np.array([it[1] for it in items])
    norm = float(logsumexp(logs))
    hyps = tuple(
        Hypothesis(labels, (), math.exp(log_w - norm), dens)
        for (labels, log_w, dens) in items)
    return DeltaGlmb(hyps)


def lmb_kla(lmbs: Sequence[Lmb], weights) -> Lmb:
    """Track-wise Kullback-Leibler average of LMBs over the label union.

    Fused existence solves r / (1 - r) = prod r_i^w * Z / prod (1-r_i)^w
    with Z the density-average normalizer; a track missing from some agent
    enters with a floor existence and a copied density.
    """
    ws = np.asarray(weights, dtype=float)
    _check_simplex(ws, len(lmbs))
    union = sorted(set().union(*[set(l.labels) for l in lmbs]))
    tracks = []
    for label in union:
        per_agent = []
        for l in lmbs:
            try:
                per_agent.append(l.track(label))
            except KeyError:
                per_agent.append(None)
        first = next(t for t in per_agent if t is not None)
        log_r = 0.0
        log_q = 0.0
        for w, t in zip(ws, per_agent):
            # a track the agent holds with r exactly 0 or 1 is absorbing;
            # only tracks the agent lacks entirely get the floor existence
            r = t.r if t is not None else _EPS_WEIGHT
            log_r += w * (math.log(r) if r > 0.0 else -math.inf)
            log_q += w * (math.log1p(-r) if r < 1.0 else -math.inf)
        gms = [t.density if t is not None else first.density for t in per_agent]
        fused, log_z = gm_kla(gms, ws)
        log_r += log_z
        if math.isinf(log_r) and log_r < 0.0:
            r_bar = 0.0
        elif math.isinf(log_q) and log_q < 0.0:
            r_bar = 1.0
        else:
            r_bar = 1.0 / (1.0 + math.exp(min(log_q - log_r, 700.0)))
        tracks.append(LmbTrack(label, r_bar, fused))
    return Lmb(tuple(tracks))


@dataclass(frozen=True)
class LabeledModel:
    """Per-node model for the labeled trackers. measurement=None marks a
    communication-only node that never corrects."""

    motion: object
    birth: Optional[Lmb]
    p_survive: float
    p_detect: float
    measurement: Optional[object] = None
    kappa: float = 1.0
    caps: GlmbCaps = DEFAULT_CAPS
    gamma_m: float = 4.0
    n_comp_max: int = 10
    track_floor: float = 1e-4
    linearization: str = "ut"
    ut_params: UtParams = DEFAULT_UT


def _cap_hypotheses(d: DeltaGlmb, cap: int) -> DeltaGlmb:
    hyps = sorted(d.hypotheses, key=lambda h: (-h.weight, h.labels, h.assoc))
    if len(hyps) > cap:
        kept = hyps[:cap]
        # never drop the empty label set: it has positive weight after every
        # predict (no births) and correct (all clutter), and keeping it at
        # every node guarantees the agents' supports always intersect, so
        # regional averaging stays well defined under low detection rates
        if all(h.labels for h in kept):
            empty = next((h for h in hyps[cap:] if not h.labels), None)
            if empty is not None:
                kept = kept[:-1] + [empty]
        hyps = kept
    tot = math.fsum(h.weight for h in hyps)
    return DeltaGlmb(tuple(
        Hypothesis(h.labels, h.assoc, h.weight / tot, h.densities) for h in hyps))


def consensus_mdglmb_step(states: Sequence[DeltaGlmb], measurements, models,
                          graph: NetworkGraph, weights: ConsensusWeights,
                          consensus_steps: int) -> list:
    """One scan of the distributed marginalized delta-GLMB tracker.

    Per node: predict, correct with the local scan (skipped where the node
    has no sensor or no scan), marginalize, then run consensus rounds of
    regional averaging. Single-node regions pass through untouched.
    """
    current = []
    for i, d in enumerate(states):
        mdl = models[i]
        pred = dglmb_predict(d, mdl.birth, mdl.p_survive, mdl.motion,
                             caps=mdl.caps, mode=mdl.linearization,
                             params=mdl.ut_params)
        y = measurements[i]
        if mdl.measurement is not None and y is not None:
            post = dglmb_update(pred, y, mdl.p_detect, mdl.measurement,
                                mdl.kappa, caps=mdl.caps,
                                mode=mdl.linearization, params=mdl.ut_params)
        else:
            post = pred
        marg = mdglmb_marginalize(post)
        marg = dglmb_housekeep(marg, mdl.gamma_m, mdl.n_comp_max)
        current.append(_cap_hypotheses(marg, mdl.caps.global_cap))
    for _ in range(consensus_steps):
        fused = []
        for i in range(len(current)):
            region = graph.in_neighbors(i)
            if len(region) == 1:
                fused.append(current[i])
                continue
            pi_row = np.array([weights.pi[i, j] for j in region])
            pi_row = pi_row / pi_row.sum()
            out = mdglmb_kla([current[j] for j in region], pi_row)
            out = dglmb_housekeep(out, models[i].gamma_m, models[i].n_comp_max)
            fused.append(_cap_hypotheses(out, models[i].caps.global_cap))
        current = fused
    return current


def consensus_lmb_step(states: Sequence[Lmb], measurements, models,
                       graph: NetworkGraph, weights: ConsensusWeights,
                       consensus_steps: int) -> list:
    """One scan of the distributed LMB tracker (same shape as the
    marginalized delta-GLMB step, with track-wise fusion)."""
    current = []
    for i, l in enumerate(states):
        mdl = models[i]
        pred = lmb_predict(l, mdl.birth, mdl.p_survive, mdl.motion,
                           mode=mdl.linearization, params=mdl.ut_params)
        y = measurements[i]
        if mdl.measurement is not None and y is not None:
            post = lmb_update(pred, y, mdl.p_detect, mdl.measurement, mdl.kappa,
                              caps=mdl.caps, mode=mdl.linearization,
                              params=mdl.ut_params)
        else:
            post = pred
        current.append(lmb_housekeep(post, mdl.gamma_m, mdl.n_comp_max,
                                     r_min=mdl.track_floor))
    for _ in range(consensus_steps):
        fused = []
        for i in range(len(current)):
            region = graph.in_neighbors(i)
            if len(region) == 1:
                fused.append(current[i])
                continue
            pi_row = np.array([weights.pi[i, j] for j in region])
            pi_row = pi_row / pi_row.sum()
            out = lmb_kla([current[j] for j in region], pi_row)
            fused.append(lmb_housekeep(out, models[i].gamma_m,
                                       models[i].n_comp_max,
                                       r_min=models[i].track_floor))
        current = fused
    return current
