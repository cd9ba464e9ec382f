"""Evaluation metrics: OSPA distance, position RMSE, cardinality statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class OspaParams:
    p: float = 2.0
    c: float = 600.0

    def __post_init__(self):
        if self.p < 1.0:
            raise ValueError("order must be >= 1")
        if self.c <= 0.0:
            raise ValueError("cutoff must be positive")


DEFAULT_OSPA = OspaParams()


def _as_points(X):
    pts = [np.atleast_1d(np.asarray(x, dtype=float)) for x in X]
    if pts:
        dims = {p.shape[0] for p in pts}
        if len(dims) != 1:
            raise ValueError("points must share a dimension")
    return pts


def ospa(X, Y, params: OspaParams = DEFAULT_OSPA) -> float:
    """Optimal subpattern assignment distance between finite point sets."""
    X = _as_points(X)
    Y = _as_points(Y)
    if X and Y and X[0].shape != Y[0].shape:
        raise ValueError("points must share a dimension")
    m, n = len(X), len(Y)
    if m == 0 and n == 0:
        return 0.0
    if m > n:
        X, Y, m, n = Y, X, n, m
    c, p = params.c, params.p
    if m == 0:
        return c
    D = np.zeros((m, n))
    for i, x in enumerate(X):
        for j, y in enumerate(Y):
            D[i, j] = min(float(np.linalg.norm(x - y)), c) ** p
    rows, cols = linear_sum_assignment(D)
    cost = float(D[rows, cols].sum())
    return float(((cost + c ** p * (n - m)) / n) ** (1.0 / p))


def prmse(estimates: Sequence, truth: Sequence, position_idx=(0, 2)) -> float:
    """Root mean square position error over paired single-object sequences.

    Entries where either side is None are skipped; an all-skipped input is
    an error.
    """
    idx = list(position_idx)
    errs = []
    for xhat, x in zip(estimates, truth):
        if xhat is None or x is None:
            continue
        xhat = np.atleast_1d(np.asarray(xhat, dtype=float))
        x = np.atleast_1d(np.asarray(x, dtype=float))
        errs.append(float(np.sum((xhat[idx] - x[idx]) ** 2)))
    if not errs:
        raise ValueError("no paired estimates to score")
    return float(np.sqrt(np.mean(errs)))


def cardinality_stats(runs: Sequence[Sequence[float]]):
    """Per-step mean and population std of estimated cardinalities.

    runs[r][k] is the cardinality of run r at step k; runs must share a
    length. Returns (mean, std) arrays over runs.
    """
    arr = np.asarray(runs, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr.mean(axis=0), arr.std(axis=0)
