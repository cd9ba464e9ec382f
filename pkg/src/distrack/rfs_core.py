"""Random-finite-set primitives.

Cardinality distributions, i.i.d. cluster densities, samplers for the
standard RFS families, and a direct quadrature evaluator for set integrals
used by tests on 1-D toys.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Callable, Sequence

import numpy as np

from .gaussian import GaussianMixture


@dataclass(frozen=True)
class CardinalityPmf:
    """Probability vector over object counts 0..n_max."""

    rho: np.ndarray

    def __post_init__(self):
        rho = np.atleast_1d(np.asarray(self.rho, dtype=float))
        if rho.ndim != 1 or rho.shape[0] == 0:
            raise ValueError("cardinality pmf must be a nonempty vector")
        if np.any(rho < 0.0):
            raise ValueError("cardinality pmf must be nonnegative")
        tot = float(rho.sum())
        if abs(tot - 1.0) > 1e-9:
            raise ValueError("cardinality pmf must sum to one")
        object.__setattr__(self, "rho", rho / tot)

    @property
    def n_max(self) -> int:
        return self.rho.shape[0] - 1

    def mean(self) -> float:
        return float(np.arange(self.rho.shape[0]) @ self.rho)

    def map_estimate(self) -> int:
        return int(np.argmax(self.rho))

    @staticmethod
    def poisson(rate: float, n_max: int) -> "CardinalityPmf":
        n = np.arange(n_max + 1)
        logs = n * math.log(rate) - rate - np.array([math.lgamma(k + 1) for k in n]) if rate > 0 else np.where(n == 0, 0.0, -np.inf)
        pmf = np.exp(logs)
        return CardinalityPmf(pmf / pmf.sum())

    @staticmethod
    def delta(count: int, n_max: int) -> "CardinalityPmf":
        rho = np.zeros(n_max + 1)
        rho[count] = 1.0
        return CardinalityPmf(rho)


@dataclass(frozen=True)
class IidClusterDensity:
    """Cardinality pmf paired with an intensity whose mass is the mean count."""

    cardinality: CardinalityPmf
    intensity: GaussianMixture

    def location_pdf(self) -> GaussianMixture:
        return self.intensity.normalized()

    def is_consistent(self, tol: float = 1e-6) -> bool:
        return abs(self.cardinality.mean() - self.intensity.total_weight()) <= tol


def _sample_gm(gm: GaussianMixture, rng: np.random.Generator) -> np.ndarray:
    w = gm.weights
    idx = rng.choice(len(w), p=w / w.sum())
    g = gm.components[idx][1]
    return rng.multivariate_normal(g.mean, g.cov)


def sample_poisson_rfs(intensity: GaussianMixture, rng: np.random.Generator):
    """Draw a Poisson RFS realization from a Gaussian-mixture intensity."""
    rate = intensity.total_weight()
    n = int(rng.poisson(rate)) if rate > 0.0 else 0
    return [_sample_gm(intensity, rng) for _ in range(n)]


def sample_iid_cluster(density: IidClusterDensity, rng: np.random.Generator):
    n = int(rng.choice(density.cardinality.rho.shape[0], p=density.cardinality.rho))
    loc = density.location_pdf()
    return [_sample_gm(loc, rng) for _ in range(n)]


def sample_bernoulli(r: float, p: GaussianMixture, rng: np.random.Generator):
    if not (0.0 <= r <= 1.0):
        raise ValueError("existence probability must be in [0, 1]")
    if rng.random() < r:
        return [_sample_gm(p, rng)]
    return []


def sample_multi_bernoulli(tracks: Sequence, rng: np.random.Generator):
    """tracks: sequence of (r, GaussianMixture)."""
    out = []
    for r, p in tracks:
        out.extend(sample_bernoulli(r, p, rng))
    return out


def multi_bernoulli_cardinality(rs, n_max: int = None) -> CardinalityPmf:
    """Exact cardinality of a multi-Bernoulli RFS by convolution."""
    rs = np.atleast_1d(np.asarray(rs, dtype=float))
    if np.any(rs < 0.0) or np.any(rs > 1.0):
        raise ValueError("existence probabilities must be in [0, 1]")
    pmf = np.array([1.0])
    for r in rs:
        pmf = np.convolve(pmf, [1.0 - r, r])
    if n_max is not None:
        if n_max + 1 < pmf.shape[0]:
            pmf = pmf[: n_max + 1]
            pmf = pmf / pmf.sum()
        else:
            pmf = np.pad(pmf, (0, n_max + 1 - pmf.shape[0]))
    return CardinalityPmf(pmf)


def set_integral_numeric(density: Callable, n_max: int, nodes, weights) -> float:
    """Evaluate sum_n (1/n!) int f({x_1..x_n}) dx_1..dx_n by quadrature.

    `density` maps a 1-D array of points (possibly empty) to the joint
    multi-object density value; it must be symmetric in its arguments.
    `nodes`/`weights` define the 1-D quadrature rule. Cost grows as the
    number of size-n multisets of nodes, so keep grids small for large n.
    """
    nodes = np.atleast_1d(np.asarray(nodes, dtype=float))
    weights = np.atleast_1d(np.asarray(weights, dtype=float))
    if nodes.shape != weights.shape:
        raise ValueError("quadrature nodes and weights must align")
    total = float(density(np.empty(0)))
    g = nodes.shape[0]
    for n in range(1, n_max + 1):
        term = 0.0
        for combo in combinations_with_replacement(range(g), n):
            pts = nodes[list(combo)]
            wprod = float(np.prod(weights[list(combo)]))
            # a multiset covers n!/prod(mult!) ordered tuples; with the 1/n!
            # prefactor each contributes w * f / prod(multiplicity factorials)
            term += wprod * float(density(pts)) / _multiset_denominator(combo)
        total += term
    return total


def _multiset_denominator(combo) -> float:
    denom = 1.0
    run = 1
    for a, b in zip(combo, combo[1:]):
        if a == b:
            run += 1
            denom *= run
        else:
            run = 1
    return denom
