"""Deterministic random number streams.

Every consumer derives its own generator from (seed, path), so trials and
sensors draw from independent streams regardless of execution order.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *path: int) -> np.random.Generator:
    """Generator for a (seed, path) pair; same inputs, same stream."""
    ss = np.random.SeedSequence(entropy=int(seed),
                                spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(seed=ss))
