"""Ground-truth and measurement simulation.

Planar motion models (constant velocity and coordinated turn on the state
[x, vx, y, vy]), range/bearing/radar sensors with Bernoulli detection and
uniform Poisson clutter, and scripted multi-object truth generation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .gaussian import chol_lower
from .kalman import LinearModel, MeasurementModel


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    out = -((-a + math.pi) % (2.0 * math.pi) - math.pi)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class MotionModel:
    """kind "ncv"/"dwna" (same discrete model) or "ct" with a constant
    angular speed in deg/s; sigma_w is the acceleration noise std."""

    kind: str
    ts: float
    sigma_w: float = 0.0
    omega_deg_s: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ncv", "dwna", "ct"):
            raise ValueError(f"unknown motion kind {self.kind!r}")
        if self.ts <= 0.0:
            raise ValueError("sampling interval must be positive")

    def matrices(self):
        T = self.ts
        omega = math.radians(self.omega_deg_s)
        if self.kind == "ct" and abs(omega) >= 1e-10:
            s, co = math.sin(omega * T), math.cos(omega * T)
            A = np.array([
                [1.0, s / omega, 0.0, -(1.0 - co) / omega],
                [0.0, co, 0.0, -s],
                [0.0, (1.0 - co) / omega, 1.0, s / omega],
                [0.0, s, 0.0, co],
            ])
        else:
            A = np.array([
                [1.0, T, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, T],
                [0.0, 0.0, 0.0, 1.0],
            ])
        q = self.sigma_w ** 2 * np.array([[T ** 4 / 4.0, T ** 3 / 2.0],
                                          [T ** 3 / 2.0, T ** 2]])
        Q = np.zeros((4, 4))
        Q[np.ix_([0, 1], [0, 1])] = q
        Q[np.ix_([2, 3], [2, 3])] = q
        return A, Q

    def linear_model(self) -> LinearModel:
        A, Q = self.matrices()
        return LinearModel(A, Q)


@dataclass(frozen=True)
class SensorModel:
    """Range-only ("toa"), bearing-only ("doa"), or bearing+range ("radar")
    sensor at a fixed planar position. Angles are radians internally; the
    bearing noise is configured in degrees. Clutter is Poisson(lambda_c)
    uniform over the observation region bounded by range_max."""

    kind: str
    position: tuple
    sigma_range: float = 100.0
    sigma_bearing_deg: float = 1.0
    p_detect: float = 1.0
    lambda_c: float = 0.0
    range_max: float = 100000.0

    def __post_init__(self):
        if self.kind not in ("toa", "doa", "radar"):
            raise ValueError(f"unknown sensor kind {self.kind!r}")
        if not (0.0 <= self.p_detect <= 1.0):
            raise ValueError("detection probability must be in [0, 1]")
        if self.lambda_c < 0.0:
            raise ValueError("clutter rate must be nonnegative")
        if self.kind != "doa" and self.sigma_range <= 0.0:
            raise ValueError("range noise std must be positive")
        if self.kind != "toa" and self.sigma_bearing_deg <= 0.0:
            raise ValueError("bearing noise std must be positive")
        object.__setattr__(self, "position",
                           (float(self.position[0]), float(self.position[1])))

    @property
    def dim(self) -> int:
        return 2 if self.kind == "radar" else 1

    def h(self, x):
        x = np.asarray(x, dtype=float)
        dx = x[0] - self.position[0]
        dy = x[2] - self.position[1]
        if self.kind == "toa":
            return np.array([math.hypot(dx, dy)])
        if self.kind == "doa":
            return np.array([math.atan2(dy, dx)])
        return np.array([math.atan2(dy, dx), math.hypot(dx, dy)])

    def noise_cov(self) -> np.ndarray:
        sb = math.radians(self.sigma_bearing_deg)
        if self.kind == "toa":
            return np.array([[self.sigma_range ** 2]])
        if self.kind == "doa":
            return np.array([[sb ** 2]])
        return np.diag([sb ** 2, self.sigma_range ** 2])

    def residual(self, y, yhat):
        e = np.atleast_1d(np.asarray(y, dtype=float) - np.asarray(yhat, dtype=float))
        if self.kind in ("doa", "radar"):
            e[0] = wrap_angle(e[0])
        return e

    def measurement_model(self) -> MeasurementModel:
        return MeasurementModel(h=self.h, R=self.noise_cov(), residual=self.residual)

    def volume(self) -> float:
        if self.kind == "toa":
            return self.range_max
        if self.kind == "doa":
            return 2.0 * math.pi
        return 2.0 * math.pi * self.range_max

    @property
    def kappa(self) -> float:
        """Clutter intensity per unit measurement volume."""
        return self.lambda_c / self.volume()

    def measure(self, x, rng: np.random.Generator):
        y = self.h(x) + chol_lower(self.noise_cov()) @ rng.standard_normal(self.dim)
        if self.kind in ("doa", "radar"):
            y[0] = wrap_angle(y[0])
        return y

    def sample_clutter(self, rng: np.random.Generator):
        count = int(rng.poisson(self.lambda_c))
        out = []
        for _ in range(count):
            if self.kind == "toa":
                out.append(np.array([rng.uniform(0.0, self.range_max)]))
            elif self.kind == "doa":
                out.append(np.array([rng.uniform(-math.pi, math.pi)]))
            else:
                out.append(np.array([rng.uniform(-math.pi, math.pi),
                                     rng.uniform(0.0, self.range_max)]))
        return out


@dataclass(frozen=True)
class TrajectorySpec:
    """Scripted object: initial state at birth, lifetime, and optional
    motion segments ((start_step, MotionModel), ...) overriding the
    scenario default from that step on."""

    x0: Sequence
    birth_step: int = 0
    death_step: Optional[int] = None
    label: Optional[tuple] = None
    segments: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if self.x0.shape != (4,):
            raise ValueError("initial state must have 4 entries")
        segs = tuple(sorted(((int(s), m) for s, m in self.segments),
                            key=lambda p: p[0]))
        object.__setattr__(self, "segments", segs)

    def model_at(self, step: int, default: MotionModel) -> MotionModel:
        model = default
        for start, m in self.segments:
            if start <= step:
                model = m
            else:
                break
        return model


def simulate_truth(specs: Sequence[TrajectorySpec], default_model: MotionModel,
                   n_steps: int, rng: Optional[np.random.Generator] = None,
                   noisy: bool = False):
    """Labeled truth per step: list (len n_steps) of [(label, state)].

    States integrate the scripted motion models; process noise is added
    only when noisy=True and an rng is given. Default labels are
    (birth_step, index in specs).
    """
    labels = []
    for i, spec in enumerate(specs):
        labels.append(tuple(spec.label) if spec.label is not None
                      else (spec.birth_step, i))
    if len(set(labels)) != len(labels):
        raise ValueError("duplicate trajectory label")
    out = [[] for _ in range(n_steps)]
    for spec, label in zip(specs, labels):
        death = n_steps if spec.death_step is None else min(spec.death_step, n_steps)
        x = spec.x0.copy()
        for k in range(spec.birth_step, death):
            out[k].append((label, x.copy()))
            model = spec.model_at(k, default_model)
            A, Q = model.matrices()
            x = A @ x
            if noisy and rng is not None and model.sigma_w > 0.0:
                x = x + chol_lower(Q) @ rng.standard_normal(4)
    return out


def simulate_measurements(truth_step, sensors: Sequence[SensorModel],
                          rng: np.random.Generator):
    """Per-sensor scans for one step of truth.

    truth_step holds states or (label, state) pairs. Each object is
    detected with probability p_detect and measured with noise; clutter
    points are appended after the detections.
    """
    states = []
    for item in truth_step:
        if isinstance(item, tuple) and len(item) == 2 and not np.isscalar(item[1]):
            states.append(np.asarray(item[1], dtype=float))
        else:
            states.append(np.asarray(item, dtype=float))
    scans = []
    for sensor in sensors:
        scan = []
        for x in states:
            if rng.uniform() < sensor.p_detect:
                scan.append(sensor.measure(x, rng))
        scan.extend(sensor.sample_clutter(rng))
        scans.append(scan)
    return scans
