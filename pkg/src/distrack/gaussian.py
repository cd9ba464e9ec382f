"""Gaussian and Gaussian-mixture primitives.

Covariance-intersection fusion, mixture powers/products, and the
merge/prune housekeeping used by every Gaussian-mixture filter in the
package. Mixtures are plain weighted component lists and are not
assumed normalized unless stated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

_LOG_2PI = math.log(2.0 * math.pi)


def symmetrize(P: np.ndarray) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    return 0.5 * (P + P.T)


def chol_lower(P: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with one jitter retry.

    On the first failure a diagonal loading of 1e-12 * trace(P) is added
    and the factorization retried; a second failure raises.
    """
    P = np.asarray(P, dtype=float)
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * float(np.trace(P))
        if jitter <= 0.0:
            jitter = 1e-12
        try:
            return np.linalg.cholesky(P + jitter * np.eye(P.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("non-invertible covariance") from exc


def solve_psd(P: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve P X = B for symmetric positive definite P via Cholesky."""
    L = chol_lower(P)
    return cho_solve((L, True), np.asarray(B, dtype=float))


def inv_psd(P: np.ndarray) -> np.ndarray:
    P = np.atleast_2d(np.asarray(P, dtype=float))
    return symmetrize(solve_psd(P, np.eye(P.shape[0])))


def mahalanobis2(diff: np.ndarray, P: np.ndarray) -> float:
    """Squared Mahalanobis distance diff' P^{-1} diff."""
    diff = np.atleast_1d(np.asarray(diff, dtype=float))
    L = chol_lower(np.atleast_2d(P))
    z = solve_triangular(L, diff, lower=True)
    return float(z @ z)


def gaussian_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = x.shape[0]
    L = chol_lower(cov)
    z = solve_triangular(L, x - mean, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return -0.5 * (d * _LOG_2PI + logdet + float(z @ z))


@dataclass(frozen=True)
class Gaussian:
    """Mean / covariance pair. Covariance is symmetrized on construction."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError("covariance shape does not match mean dimension")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if not np.allclose(cov, cov.T, atol=1e-8 * scale):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", symmetrize(cov))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def log_pdf(self, x) -> float:
        return gaussian_logpdf(x, self.mean, self.cov)

    def pdf(self, x) -> float:
        return math.exp(self.log_pdf(x))

    def to_info(self) -> "InformationPair":
        omega = inv_psd(self.cov)
        return InformationPair(omega=omega, q=omega @ self.mean)


@dataclass(frozen=True)
class InformationPair:
    """Information matrix Omega = P^{-1} and vector q = P^{-1} x."""

    omega: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        omega = np.atleast_2d(np.asarray(self.omega, dtype=float))
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        if omega.shape != (q.shape[0], q.shape[0]):
            raise ValueError("information matrix shape does not match vector")
        object.__setattr__(self, "omega", symmetrize(omega))
        object.__setattr__(self, "q", q)

    @property
    def dim(self) -> int:
        return self.q.shape[0]

    def to_gaussian(self) -> Gaussian:
        cov = inv_psd(self.omega)
        return Gaussian(mean=cov @ self.q, cov=cov)


@dataclass(frozen=True)
class GaussianMixture:
    """Weighted Gaussian components; weights need not sum to one."""

    components: tuple

    def __post_init__(self):
        comps = []
        for w, g in self.components:
            w = float(w)
            if w < 0.0:
                raise ValueError("mixture weights must be nonnegative")
            if not isinstance(g, Gaussian):
                g = Gaussian(*g)
            comps.append((w, g))
        object.__setattr__(self, "components", tuple(comps))

    def __len__(self) -> int:
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.components], dtype=float)

    @property
    def dim(self) -> int:
        if not self.components:
            raise ValueError("empty mixture has no dimension")
        return self.components[0][1].dim

    def total_weight(self) -> float:
        return math.fsum(w for w, _ in self.components)

    def is_normalized(self, tol: float = 1e-9) -> bool:
        return abs(self.total_weight() - 1.0) <= tol

    def normalized(self) -> "GaussianMixture":
        tot = self.total_weight()
        if tot <= 0.0:
            raise ValueError("cannot normalize a zero-mass mixture")
        return GaussianMixture(tuple((w / tot, g) for w, g in self.components))

    def scaled(self, c: float) -> "GaussianMixture":
        return GaussianMixture(tuple((w * c, g) for w, g in self.components))

    def pdf(self, x) -> float:
        return math.fsum(w * g.pdf(x) for w, g in self.components)

    def moment_match(self) -> Gaussian:
        """Single Gaussian with the mixture's overall mean and covariance."""
        tot = self.total_weight()
        if tot <= 0.0:
            raise ValueError("cannot moment-match a zero-mass mixture")
        mean = np.zeros(self.dim)
        for w, g in self.components:
            mean += (w / tot) * g.mean
        cov = np.zeros((self.dim, self.dim))
        for w, g in self.components:
            d = g.mean - mean
            cov += (w / tot) * (g.cov + np.outer(d, d))
        return Gaussian(mean=mean, cov=cov)


def gm_from_arrays(weights, means, covs) -> GaussianMixture:
    return GaussianMixture(
        tuple((float(w), Gaussian(m, P)) for w, m, P in zip(weights, means, covs))
    )


def _check_simplex(weights, n: int) -> np.ndarray:
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    if w.shape[0] != n:
        raise ValueError("one fusion weight per density required")
    if np.any(w < 0.0) or abs(float(np.sum(w)) - 1.0) > 1e-9:
        raise ValueError("fusion weights must be nonnegative and sum to one")
    return w


def ci_fuse(densities: Sequence[Gaussian], weights) -> Gaussian:
    """Covariance-intersection fusion of Gaussians.

    Fused information matrix/vector are the weighted sums of the inputs'
    information pairs; weights live on the simplex.
    """
    densities = list(densities)
    if not densities:
        raise ValueError("ci_fuse requires at least one density")
    w = _check_simplex(weights, len(densities))
    dim = densities[0].dim
    omega = np.zeros((dim, dim))
    q = np.zeros(dim)
    for wi, g in zip(w, densities):
        if wi == 0.0:
            continue
        info = g.to_info()
        omega += wi * info.omega
        q += wi * info.q
    return InformationPair(omega, q).to_gaussian()


def log_power_scale(omega: float, cov: np.ndarray) -> float:
    """log of the constant relating N(m,P)^omega to N(m, P/omega).

    Equals 0.5*logdet(2 pi P / omega) - 0.5*omega*logdet(2 pi P).
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = cov.shape[0]
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise np.linalg.LinAlgError("covariance with nonpositive determinant")
    return 0.5 * (1.0 - omega) * (d * _LOG_2PI + logdet) - 0.5 * d * math.log(omega)


def gm_power(gm: GaussianMixture, omega: float) -> GaussianMixture:
    """Component-wise exponentiation of a Gaussian mixture.

    Each component (w, N(m, P)) maps to (w^omega * scale, N(m, P/omega)).
    The result is not normalized. Requires 0 < omega <= 1.
    """
    if not (0.0 < omega <= 1.0):
        raise ValueError("power exponent must be in (0, 1]")
    out = []
    for w, g in gm.components:
        if w == 0.0:
            continue
        scale = math.exp(log_power_scale(omega, g.cov))
        out.append((w ** omega * scale, Gaussian(g.mean, g.cov / omega)))
    return GaussianMixture(tuple(out))


def _gaussian_product(wa, ga: Gaussian, wb, gb: Gaussian):
    S = ga.cov + gb.cov
    gain = solve_psd(S, ga.cov).T  # P_a S^{-1}
    mean = ga.mean + gain @ (gb.mean - ga.mean)
    cov = symmetrize(ga.cov - gain @ ga.cov)
    logw = math.log(wa) + math.log(wb) + gaussian_logpdf(ga.mean - gb.mean, np.zeros(ga.dim), S)
    return logw, Gaussian(mean, cov)


def gm_product_pairwise(a: GaussianMixture, b: GaussianMixture) -> GaussianMixture:
    """All-pairs product of two mixtures; |a|*|b| components, unnormalized."""
    out = []
    for wa, ga in a.components:
        for wb, gb in b.components:
            if wa == 0.0 or wb == 0.0:
                continue
            logw, g = _gaussian_product(wa, ga, wb, gb)
            out.append((math.exp(logw), g))
    return GaussianMixture(tuple(out))


_PRUNE_REL_FLOOR = 1e-12


def gm_ci_fuse_pair_with_log_mass(a: GaussianMixture, b: GaussianMixture, omega: float):
    """Pairwise CI fusion of two mixtures.

    Returns the normalized fused mixture together with the log of the
    pre-normalization mass (the approximate value of int a^omega b^(1-omega) dx,
    exact when both mixtures are single Gaussians). Components whose weight
    falls below 1e-12 of the largest are dropped before normalization.
    """
    if not (0.0 < omega < 1.0):
        raise ValueError("fusion exponent must be in the open interval (0, 1)")
    if len(a) == 0 or len(b) == 0:
        raise ValueError("cannot fuse an empty mixture")
    fused = gm_product_pairwise(gm_power(a, omega), gm_power(b, 1.0 - omega))
    w = fused.weights
    keep = w >= _PRUNE_REL_FLOOR * float(np.max(w))
    comps = tuple(c for c, k in zip(fused.components, keep) if k)
    mass = math.fsum(c[0] for c in comps)
    if mass <= 0.0:
        raise ValueError("fused mixture has zero mass")
    norm = GaussianMixture(tuple((w_ / mass, g) for w_, g in comps))
    return norm, math.log(mass)


def gm_ci_fuse_pair(a: GaussianMixture, b: GaussianMixture, omega: float) -> GaussianMixture:
    fused, _ = gm_ci_fuse_pair_with_log_mass(a, b, omega)
    return fused


def gm_kla(mixtures: Sequence[GaussianMixture], weights):
    """Normalized weighted geometric mean of several mixtures.

    Realized by chaining the pairwise CI fusion with cumulative weights.
    Returns the fused (normalized) mixture and log of int prod_i p_i^{w_i} dx.
    Unnormalized inputs contribute their mass as prod_i t_i^{w_i}.
    """
    mixtures = list(mixtures)
    w = _check_simplex(weights, len(mixtures))
    live = [(float(wi), gm) for wi, gm in zip(w, mixtures) if wi > 0.0]
    if not live:
        raise ValueError("all fusion weights are zero")
    log_mass = math.fsum(wi * math.log(gm.total_weight()) for wi, gm in live)
    fused = live[0][1].normalized()
    log_zs = 0.0
    acc = live[0][0]
    for wi, gmi in live[1:]:
        s = acc / (acc + wi)
        fused, log_c = gm_ci_fuse_pair_with_log_mass(fused, gmi.normalized(), s)
        # running normalizer: int prod s^{w/(acc+wi)} = c * (previous Z)^s
        log_zs = s * log_zs + log_c
        acc += wi
    return fused, log_mass + log_zs


def merge(gm: GaussianMixture, gamma_m: float) -> GaussianMixture:
    """Greedy merging of nearby components.

    Repeatedly takes the highest-weight remaining component, clusters every
    component whose squared Mahalanobis distance (in its own covariance
    metric) from that center is <= gamma_m, and replaces the cluster by its
    moment-matched Gaussian. Total weight is preserved.
    """
    comps = list(gm.components)
    if not comps:
        return gm
    inv_covs = [inv_psd(g.cov) for _, g in comps]
    remaining = list(range(len(comps)))
    out = []
    while remaining:
        j = max(remaining, key=lambda i: (comps[i][0], -i))
        center = comps[j][1].mean
        cluster = []
        for i in remaining:
            d = center - comps[i][1].mean
            if float(d @ inv_covs[i] @ d) <= gamma_m:
                cluster.append(i)
        wbar = math.fsum(comps[i][0] for i in cluster)
        mean = np.zeros(comps[j][1].dim)
        for i in cluster:
            mean += (comps[i][0] / wbar) * comps[i][1].mean
        cov = np.zeros((comps[j][1].dim, comps[j][1].dim))
        for i in cluster:
            d = mean - comps[i][1].mean
            cov += (comps[i][0] / wbar) * (comps[i][1].cov + np.outer(d, d))
        out.append((wbar, Gaussian(mean, cov)))
        cluster_set = set(cluster)
        remaining = [i for i in remaining if i not in cluster_set]
    return GaussianMixture(tuple(out))


def prune(gm: GaussianMixture, n_max: int) -> GaussianMixture:
    """Keep the n_max highest-weight components (ties by original index)."""
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    if len(gm) <= n_max:
        return gm
    order = np.argsort(-gm.weights, kind="stable")[:n_max]
    keep = sorted(int(i) for i in order)
    return GaussianMixture(tuple(gm.components[i] for i in keep))


def truncate(gm: GaussianMixture, weight_floor: float) -> GaussianMixture:
    """Drop components below an absolute weight floor (mass not rescaled)."""
    return GaussianMixture(tuple((w, g) for w, g in gm.components if w >= weight_floor))
