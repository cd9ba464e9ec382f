"""Labeled random-finite-set filters.

delta-GLMB prediction and update with exact small-problem association
enumeration (best-first beyond the exhaustive limits), marginalization to
one hypothesis per label set, LMB prediction/expansion/collapse, grid-based
density approximation for tests, and estimate extraction. Labels are
(birth_step, index) integer pairs.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .gaussian import GaussianMixture, merge, prune
from .kalman import DEFAULT_UT, UtParams, measurement_correct, motion_predict
from .rfs_core import multi_bernoulli_cardinality, sample_bernoulli


def _canon_label(label):
    a, b = label
    return (int(a), int(b))


@dataclass(frozen=True)
class Hypothesis:
    """One delta-GLMB hypothesis: label set, association key, weight,
    and a normalized mixture per label (aligned with the sorted labels)."""

    labels: tuple
    assoc: tuple
    weight: float
    densities: tuple

    def __post_init__(self):
        labels = tuple(_canon_label(l) for l in self.labels)
        if len(set(labels)) != len(labels):
            raise ValueError("hypothesis labels must be distinct")
        if len(self.densities) != len(labels):
            raise ValueError("one density per label required")
        sorted_pairs = sorted(zip(labels, self.densities), key=lambda p: p[0])
        labels = tuple(l for l, _ in sorted_pairs)
        densities = tuple(d for _, d in sorted_pairs)
        if self.weight < 0.0:
            raise ValueError("hypothesis weight must be nonnegative")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "densities", densities)
        object.__setattr__(self, "assoc", tuple(self.assoc))
        object.__setattr__(self, "weight", float(self.weight))

    def density(self, label) -> GaussianMixture:
        return self.densities[self.labels.index(_canon_label(label))]

    @property
    def label_set(self) -> frozenset:
        return frozenset(self.labels)


@dataclass(frozen=True)
class DeltaGlmb:
    hypotheses: tuple

    def __post_init__(self):
        hyps = tuple(self.hypotheses)
        seen = set()
        for h in hyps:
            key = (h.labels, h.assoc)
            if key in seen:
                raise ValueError("duplicate (label set, association) hypothesis")
            seen.add(key)
        object.__setattr__(self, "hypotheses", hyps)

    def total_weight(self) -> float:
        return math.fsum(h.weight for h in self.hypotheses)

    def normalized(self) -> "DeltaGlmb":
        tot = self.total_weight()
        if tot <= 0.0:
            raise ValueError("cannot normalize a zero-mass density")
        return DeltaGlmb(tuple(
            Hypothesis(h.labels, h.assoc, h.weight / tot, h.densities)
            for h in self.hypotheses))

    def all_labels(self) -> tuple:
        out = set()
        for h in self.hypotheses:
            out.update(h.labels)
        return tuple(sorted(out))


@dataclass(frozen=True)
class AssociationMap:
    """theta: label index -> measurement index (0 = missed detection)."""

    theta: tuple

    def __post_init__(self):
        theta = tuple(int(t) for t in self.theta)
        positive = [t for t in theta if t > 0]
        if len(set(positive)) != len(positive):
            raise ValueError("association map must be injective on detections")
        if any(t < 0 for t in theta):
            raise ValueError("association indices must be nonnegative")
        object.__setattr__(self, "theta", theta)


@dataclass(frozen=True)
class LmbTrack:
    label: tuple
    r: float
    density: GaussianMixture

    def __post_init__(self):
        if not (0.0 <= self.r <= 1.0 + 1e-12):
            raise ValueError("existence probability must be in [0, 1]")
        object.__setattr__(self, "label", _canon_label(self.label))
        object.__setattr__(self, "r", min(float(self.r), 1.0))


@dataclass(frozen=True)
class Lmb:
    tracks: tuple

    def __post_init__(self):
        tracks = tuple(sorted(self.tracks, key=lambda t: t.label))
        labels = [t.label for t in tracks]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate track label")
        object.__setattr__(self, "tracks", tracks)

    @property
    def labels(self) -> tuple:
        return tuple(t.label for t in self.tracks)

    def track(self, label) -> LmbTrack:
        label = _canon_label(label)
        for t in self.tracks:
            if t.label == label:
                return t
        raise KeyError(label)


@dataclass(frozen=True)
class GlmbCaps:
    """Enumeration limits for the labeled filters."""

    cap_per_hypothesis: int = 100
    assoc_cap: int = 100
    global_cap: int = 1000
    exhaustive_measurements: int = 8
    exhaustive_labels: int = 6
    expand_cap: int = 12


DEFAULT_CAPS = GlmbCaps()


def glmb_cardinality(d: DeltaGlmb) -> np.ndarray:
    """Cardinality pmf; weights are grouped per label set before summing so
    marginalization preserves the result bit for bit."""
    groups = {}
    for h in d.hypotheses:
        groups.setdefault(h.labels, []).append(h.weight)
    if not groups:
        return np.array([0.0])
    n_max = max(len(labels) for labels in groups)
    rho = [0.0] * (n_max + 1)
    by_n = {}
    for labels in sorted(groups):
        by_n.setdefault(len(labels), []).append(math.fsum(groups[labels]))
    for n, vals in by_n.items():
        rho[n] = math.fsum(vals)
    return np.array(rho)


def glmb_label_masses(d: DeltaGlmb) -> dict:
    """Existence probability per label: total weight of hypotheses containing it."""
    out = {}
    for label in d.all_labels():
        out[label] = math.fsum(h.weight for h in d.hypotheses if label in h.labels)
    return out


def glmb_phd(d: DeltaGlmb, label, x) -> float:
    """Labeled intensity at (x, label)."""
    label = _canon_label(label)
    return math.fsum(h.weight * h.density(label).pdf(x)
                     for h in d.hypotheses if label in h.labels)


def _subset_weights(items):
    """All subsets of [(key, p)] with inclusion probability p, sorted by
    descending weight. Returns [(weight, keys tuple)]."""
    subsets = [(1.0, ())]
    for key, p in items:
        nxt = []
        for w, keys in subsets:
            nxt.append((w * (1.0 - p), keys))
            nxt.append((w * p, keys + (key,)))
        subsets = nxt
    subsets.sort(key=lambda t: (-t[0], t[1]))
    return subsets


def _top_pairs(left, right, k):
    """Top-k products of two descending weight lists via a frontier heap.

    left/right: [(weight, payload)] sorted descending. Yields
    (weight_product, payload_left, payload_right).
    """
    if not left or not right:
        return
    heap = [(-left[0][0] * right[0][0], 0, 0)]
    seen = {(0, 0)}
    count = 0
    while heap and (k is None or count < k):
        negw, i, j = heapq.heappop(heap)
        yield -negw, left[i][1], right[j][1]
        count += 1
        for ni, nj in ((i + 1, j), (i, j + 1)):
            if ni < len(left) and nj < len(right) and (ni, nj) not in seen:
                seen.add((ni, nj))
                heapq.heappush(heap, (-left[ni][0] * right[nj][0], ni, nj))


class _ChildAccumulator:
    """Collects child hypotheses, merging collisions on (labels, assoc) by
    adding weights and mixing the per-label densities in proportion."""

    def __init__(self):
        self._items = {}

    def add(self, labels, assoc, weight, density_lookup):
        if weight <= 0.0:
            return
        key = (labels, assoc)
        entry = self._items.get(key)
        if entry is None:
            self._items[key] = [weight, [(weight, density_lookup)]]
        else:
            entry[0] += weight
            entry[1].append((weight, density_lookup))

    def build(self, global_cap):
        hyps = []
        for (labels, assoc), (weight, contribs) in self._items.items():
            if len(contribs) == 1:
                lookup = contribs[0][1]
                densities = tuple(lookup(l) for l in labels)
            else:
                densities = []
                for l in labels:
                    mixed = []
                    for w_c, lookup in contribs:
                        gm = lookup(l)
                        scale = w_c / weight
                        mixed.extend((scale * wc, g) for wc, g in gm.components)
                    densities.append(GaussianMixture(tuple(mixed)))
                densities = tuple(densities)
            hyps.append(Hypothesis(labels, assoc, weight, densities))
        hyps.sort(key=lambda h: (-h.weight, h.labels, h.assoc))
        if global_cap is not None and len(hyps) > global_cap:
            kept = hyps[:global_cap]
            # pin the empty label set when present: it carries the no-target
            # explanation (all deaths / all clutter), and keeping it in every
            # capped support means distributed averaging always finds at
            # least one label set shared by all agents
            if all(h.labels for h in kept):
                empty = next((h for h in hyps[global_cap:] if not h.labels), None)
                if empty is not None:
                    kept = kept[:-1] + [empty]
            hyps = kept
        tot = math.fsum(h.weight for h in hyps)
        if tot <= 0.0:
            raise ValueError("all hypotheses lost their weight")
        hyps = [Hypothesis(h.labels, h.assoc, h.weight / tot, h.densities) for h in hyps]
        return DeltaGlmb(tuple(hyps))


def dglmb_predict(d: DeltaGlmb, birth: Optional[Lmb], p_survive: float, motion,
                  caps: GlmbCaps = DEFAULT_CAPS, mode: str = "ut",
                  params: UtParams = DEFAULT_UT) -> DeltaGlmb:
    """Survival-thinned label subsets crossed with birth subsets.

    Children are enumerated best-first per parent hypothesis up to
    caps.cap_per_hypothesis, then capped globally and renormalized.
    """
    birth_tracks = list(birth.tracks) if birth is not None else []
    if len(birth_tracks) > 16:
        raise ValueError("birth model too large to enumerate")
    birth_subsets = _subset_weights([(t.label, t.r) for t in birth_tracks])
    birth_density = {t.label: t.density for t in birth_tracks}
    acc = _ChildAccumulator()
    for hyp in d.hypotheses:
        if hyp.weight <= 0.0:
            continue
        for l in hyp.labels:
            if l in birth_density:
                raise ValueError("birth label collides with a surviving label")
        pred_density = {
            l: GaussianMixture(tuple(
                (w, motion_predict(g, motion, mode=mode, params=params))
                for w, g in hyp.density(l).components))
            for l in hyp.labels
        }
        surv_subsets = [(ws * hyp.weight, keys) for ws, keys in
                        _subset_weights([(l, p_survive) for l in hyp.labels])]

        def lookup(label, _pred=pred_density):
            got = _pred.get(label)
            return got if got is not None else birth_density[label]

        for w_child, surv_keys, birth_keys in _top_pairs(
                surv_subsets, birth_subsets, caps.cap_per_hypothesis):
            labels = tuple(sorted(surv_keys + birth_keys))
            acc.add(labels, hyp.assoc, w_child, lookup)
    return acc.build(caps.global_cap)


def _updated_label_terms(gm: GaussianMixture, Y, p_detect, model, kappa,
                         mode, params, cache):
    """log eta and the posterior mixture for every association choice of one
    label density. Index 0 is the missed detection.

    Cached at two levels: per mixture and per (component, measurement),
    because hypotheses produced by marginalization and prediction share
    component objects."""
    got = cache.get(id(gm))
    if got is not None:
        return got
    comp_cache = cache.setdefault("components", {})
    m = len(Y)
    log_eta = np.empty(m + 1)
    log_eta[0] = math.log(1.0 - p_detect) if p_detect < 1.0 else -math.inf
    posts = [gm]
    for j, y in enumerate(Y, start=1):
        terms = []
        for w, g in gm.components:
            ck = (id(g), j)
            hit = comp_cache.get(ck)
            if hit is None:
                post, _, loglik = measurement_correct(g, y, model, mode=mode,
                                                      params=params)
                hit = (loglik, post)
                comp_cache[ck] = hit
            loglik, post = hit
            terms.append((math.log(w) + loglik if w > 0.0 else -math.inf, post))
        logs = np.array([t[0] for t in terms])
        peak = float(np.max(logs))
        if not math.isfinite(peak):
            log_eta[j] = -math.inf
            posts.append(gm)
            continue
        scaled = np.exp(logs - peak)
        total = float(scaled.sum())
        log_eta[j] = peak + math.log(total) + math.log(p_detect) - math.log(kappa)
        posts.append(GaussianMixture(tuple(
            (s / total, t[1]) for s, t in zip(scaled, terms))))
    out = (log_eta, posts, gm)
    cache[id(gm)] = out
    return out


def _top_assignments(log_eta: np.ndarray, k):
    """Best-first enumeration of injective association maps.

    log_eta[i, j] scores label i against measurement j (column 0 = miss).
    Yields (total_log_weight, theta tuple) in descending order of an
    admissible bound; results are exact top-k. k=None enumerates all.
    """
    n, m1 = log_eta.shape
    if n == 0:
        yield 0.0, ()
        return
    suffix = np.zeros(n + 1)
    for i in range(n - 1, -1, -1):
        suffix[i] = suffix[i + 1] + float(np.max(log_eta[i]))
    if not math.isfinite(suffix[0]):
        return
    heap = [(-suffix[0], 0, 0, ())]
    count = 0
    while heap and (k is None or count < k):
        bound, i, used, theta = heapq.heappop(heap)
        if i == n:
            yield -bound, theta
            count += 1
            continue
        partial = -bound - suffix[i]
        for j in range(m1):
            if j > 0 and used & (1 << (j - 1)):
                continue
            score = log_eta[i, j]
            if not math.isfinite(score):
                continue
            new_used = used | (1 << (j - 1)) if j > 0 else used
            heapq.heappush(heap, (-(partial + score + suffix[i + 1]),
                                  i + 1, new_used, theta + (j,)))


def dglmb_update(d: DeltaGlmb, Y: Sequence, p_detect: float, model, kappa: float,
                 caps: GlmbCaps = DEFAULT_CAPS, mode: str = "ut",
                 params: UtParams = DEFAULT_UT) -> DeltaGlmb:
    """Measurement update over association maps.

    Enumeration is exhaustive within caps.exhaustive_* limits and
    best-first truncated to caps.assoc_cap otherwise; hypotheses are then
    capped globally and renormalized.
    """
    Y = [np.atleast_1d(np.asarray(y, dtype=float)) for y in Y]
    # with zero clutter every measurement must be target-generated: score the
    # maps at unit clutter, count detections (the power of 1/kappa each map
    # carries), and keep only the maps at the globally maximal power, which is
    # the exact kappa -> 0 limit of the normalized posterior
    zero_clutter = kappa <= 0.0 and bool(Y)
    kappa_eff = 1.0 if zero_clutter else kappa
    cache = {}
    children = []
    for hyp in d.hypotheses:
        if hyp.weight <= 0.0:
            continue
        n = len(hyp.labels)
        terms = [_updated_label_terms(hyp.density(l), Y, p_detect, model,
                                      kappa_eff, mode, params, cache)
                 for l in hyp.labels]
        log_eta = np.array([t[0] for t in terms]).reshape(n, len(Y) + 1)
        exhaustive = (len(Y) <= caps.exhaustive_measurements
                      and n <= caps.exhaustive_labels)
        limit = None if exhaustive else caps.assoc_cap
        base = math.log(hyp.weight)
        for log_w, theta in _top_assignments(log_eta, limit):
            posts = {l: terms[i][1][theta[i]] for i, l in enumerate(hyp.labels)}
            detections = sum(1 for t in theta if t > 0)
            children.append((hyp.labels, hyp.assoc + (theta,),
                             math.exp(base + log_w), posts.__getitem__,
                             detections))
    if zero_clutter:
        live = [c for c in children if c[2] > 0.0]
        if not live:
            raise ValueError("all hypotheses lost their weight")
        deg_max = max(c[4] for c in live)
        children = [c for c in live if c[4] == deg_max]
    acc = _ChildAccumulator()
    for labels, assoc, weight, lookup, _ in children:
        acc.add(labels, assoc, weight, lookup)
    return acc.build(caps.global_cap)


def mdglmb_marginalize(d: DeltaGlmb) -> DeltaGlmb:
    """Collapse association histories: one hypothesis per label set whose
    weight is the group sum and whose label densities are the
    weight-proportional mixtures of the group members."""
    groups = {}
    for h in d.hypotheses:
        groups.setdefault(h.labels, []).append(h)
    out = []
    for labels in sorted(groups):
        members = groups[labels]
        weight = math.fsum(h.weight for h in members)
        if len(members) == 1:
            out.append(Hypothesis(labels, (), weight, members[0].densities))
            continue
        densities = []
        for l in labels:
            mixed = []
            for h in members:
                scale = h.weight / weight
                mixed.extend((scale * wc, g) for wc, g in h.density(l).components)
            densities.append(GaussianMixture(tuple(mixed)))
        out.append(Hypothesis(labels, (), weight, tuple(densities)))
    return DeltaGlmb(tuple(out))


@dataclass(frozen=True)
class GridHypothesis:
    """Testing-grade hypothesis whose label densities live on a shared 1-D grid."""

    labels: tuple
    weight: float
    marginals: tuple


def glmb_approximate(labels: Sequence, joint: Callable, nodes, weights):
    """Best matching generalized labeled multi-Bernoulli on a grid.

    `joint(label_subset, points)` evaluates the labeled multi-object
    density at the set pairing label_subset[i] with points[i]. Returns one
    GridHypothesis per label subset: its weight is the set integral over
    the subset and the marginals integrate the joint over the other labels.
    Limited to three labels; meant for validating the construction on toys.
    """
    labels = tuple(sorted(_canon_label(l) for l in labels))
    if len(labels) > 3:
        raise ValueError("grid approximation supports at most three labels")
    nodes = np.atleast_1d(np.asarray(nodes, dtype=float))
    qw = np.atleast_1d(np.asarray(weights, dtype=float))
    g = nodes.shape[0]
    out = []
    for mask in range(1 << len(labels)):
        subset = tuple(l for i, l in enumerate(labels) if mask & (1 << i))
        n = len(subset)
        if n == 0:
            out.append(GridHypothesis((), float(joint((), np.empty(0))), ()))
            continue
        vals = np.zeros((g,) * n)
        for idx in np.ndindex(*vals.shape):
            vals[idx] = joint(subset, nodes[list(idx)])
        cell = np.ones(())
        for axis in range(n):
            shape = [1] * n
            shape[axis] = g
            cell = cell * qw.reshape(shape)
        weight = float((vals * cell).sum())
        marginals = []
        for axis in range(n):
            other_axes = tuple(a for a in range(n) if a != axis)
            other_cell = np.ones(())
            for a in other_axes:
                shape = [1] * n
                shape[a] = g
                other_cell = other_cell * qw.reshape(shape)
            marg = (vals * other_cell).sum(axis=other_axes)
            marginals.append(marg / weight if weight > 0.0 else marg)
        out.append(GridHypothesis(subset, weight, tuple(marginals)))
    out.sort(key=lambda h: (len(h.labels), h.labels))
    return tuple(out)


def lmb_predict(lmb: Lmb, birth: Optional[Lmb], p_survive: float, motion,
                mode: str = "ut", params: UtParams = DEFAULT_UT) -> Lmb:
    tracks = []
    for t in lmb.tracks:
        density = GaussianMixture(tuple(
            (w, motion_predict(g, motion, mode=mode, params=params))
            for w, g in t.density.components))
        tracks.append(LmbTrack(t.label, p_survive * t.r, density))
    if birth is not None:
        existing = {t.label for t in tracks}
        for t in birth.tracks:
            if t.label in existing:
                raise ValueError("birth label collides with a surviving label")
            tracks.append(t)
    return Lmb(tuple(tracks))


def lmb_to_dglmb(lmb: Lmb, global_cap: Optional[int] = None) -> DeltaGlmb:
    """Expand into one hypothesis per track subset."""
    if len(lmb.tracks) > 16:
        raise ValueError("too many tracks to expand exhaustively")
    density = {t.label: t.density for t in lmb.tracks}
    subsets = _subset_weights([(t.label, t.r) for t in lmb.tracks])
    if global_cap is not None:
        subsets = subsets[:global_cap]
    tot = math.fsum(w for w, _ in subsets)
    hyps = []
    for w, keys in subsets:
        labels = tuple(sorted(keys))
        hyps.append(Hypothesis(labels, (), w / tot,
                               tuple(density[l] for l in labels)))
    return DeltaGlmb(tuple(hyps))


def lmb_from_dglmb(d: DeltaGlmb) -> Lmb:
    """Collapse to the label-marginal multi-Bernoulli (matches the intensity)."""
    masses = glmb_label_masses(d)
    tracks = []
    for label in sorted(masses):
        r = masses[label]
        if r <= 0.0:
            continue
        mixed = []
        for h in d.hypotheses:
            if label in h.labels and h.weight > 0.0:
                scale = h.weight / r
                mixed.extend((scale * wc, g) for wc, g in h.density(label).components)
        tracks.append(LmbTrack(label, min(r, 1.0), GaussianMixture(tuple(mixed))))
    return Lmb(tuple(tracks))


def lmb_update(lmb: Lmb, Y: Sequence, p_detect: float, model, kappa: float,
               caps: GlmbCaps = DEFAULT_CAPS, mode: str = "ut",
               params: UtParams = DEFAULT_UT) -> Lmb:
    """Expand the most likely tracks, run the delta-GLMB update, collapse.

    Only the caps.expand_cap highest-existence tracks enter the update;
    the rest are carried through unchanged.
    """
    order = sorted(lmb.tracks, key=lambda t: (-t.r, t.label))
    active = order[: caps.expand_cap]
    passive = order[caps.expand_cap :]
    if not active:
        return lmb
    d = lmb_to_dglmb(Lmb(tuple(active)), global_cap=caps.global_cap)
    d_post = dglmb_update(d, Y, p_detect, model, kappa, caps=caps,
                          mode=mode, params=params)
    collapsed = lmb_from_dglmb(d_post)
    tracks = list(collapsed.tracks) + list(passive)
    return Lmb(tuple(tracks))


def lmb_prune_tracks(lmb: Lmb, r_min: float) -> Lmb:
    return Lmb(tuple(t for t in lmb.tracks if t.r >= r_min))


def mdglmb_extract(d: DeltaGlmb):
    """MAP cardinality, then the best hypothesis of that size, then the
    top-weight component mean per label."""
    rho = glmb_cardinality(d)
    c = int(np.argmax(rho))
    if c == 0:
        return []
    candidates = [h for h in d.hypotheses if len(h.labels) == c]
    candidates.sort(key=lambda h: (-h.weight, h.labels, h.assoc))
    best = candidates[0]
    out = []
    for label in best.labels:
        gm = best.density(label)
        idx = int(np.argmax(gm.weights))
        out.append((label, gm.components[idx][1].mean.copy()))
    return out


def lmb_extract(lmb: Lmb):
    """MAP cardinality from the exact multi-Bernoulli pmf, then the
    highest-existence tracks."""
    if not lmb.tracks:
        return []
    rho = multi_bernoulli_cardinality([t.r for t in lmb.tracks])
    c = int(np.argmax(rho.rho))
    if c == 0:
        return []
    order = sorted(lmb.tracks, key=lambda t: (-t.r, t.label))[:c]
    out = []
    for t in order:
        idx = int(np.argmax(t.density.weights))
        out.append((t.label, t.density.components[idx][1].mean.copy()))
    return sorted(out, key=lambda p: p[0])


def sample_labeled(lmb: Lmb, rng: np.random.Generator):
    """Draw a labeled multi-Bernoulli realization as (label, state) pairs."""
    out = []
    for t in lmb.tracks:
        pts = sample_bernoulli(t.r, t.density, rng)
        if pts:
            out.append((t.label, pts[0]))
    return out


def dglmb_housekeep(d: DeltaGlmb, gamma_m: float, n_comp_max: int) -> DeltaGlmb:
    """Merge and cap the per-label mixtures (weights renormalized per label)."""
    hyps = []
    for h in d.hypotheses:
        densities = []
        for gm in h.densities:
            out = prune(merge(gm, gamma_m), n_comp_max)
            densities.append(out.normalized())
        hyps.append(Hypothesis(h.labels, h.assoc, h.weight, tuple(densities)))
    return DeltaGlmb(tuple(hyps))


def lmb_housekeep(lmb: Lmb, gamma_m: float, n_comp_max: int, r_min: float = 0.0) -> Lmb:
    tracks = []
    for t in lmb.tracks:
        if t.r < r_min:
            continue
        gm = prune(merge(t.density, gamma_m), n_comp_max).normalized()
        tracks.append(LmbTrack(t.label, t.r, gm))
    return Lmb(tuple(tracks))
