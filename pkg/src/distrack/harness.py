"""Experiment orchestration: config parsing, Monte Carlo runs, CSV/JSON output.

The config is a nested mapping (YAML or JSON file). Every run emits one
CSV row per (trial, step, node) holding the algorithm's primary metric
(position error for single-object trackers, OSPA for multi-object ones)
plus a JSON summary whose means are recomputed from the emitted rows.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import yaml
from scipy.linalg import block_diag

from .cphd import (
    CphdModel,
    CphdState,
    GmThresholds,
    _housekeep,
    cgm_cphd_node_step,
    cphd_correct,
    cphd_extract,
    cphd_predict,
)
from .gaussian import Gaussian, GaussianMixture, prune
from .kalman import DEFAULT_UT, LinearModel, NonlinearModel
from .labeled_fusion import (
    LabeledModel,
    _cap_hypotheses,
    consensus_lmb_step,
    consensus_mdglmb_step,
)
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
    lmb_extract,
    lmb_housekeep,
    lmb_predict,
    lmb_update,
    mdglmb_extract,
    mdglmb_marginalize,
)
from .metrics import OspaParams, ospa
from .mm_filters import JumpMarkovModel, ModeBank, bank_fused, gpb1_step, imm_step
from .network_consensus import (
    COMMUNICATION,
    SENSOR,
    NetworkGraph,
    clcp_step,
    cp_step,
    dgpb1_step,
    dimm_step,
    metropolis_weights,
    symmetric_arcs,
)
from .rfs_core import CardinalityPmf
from .rng import stream
from .scenario import MotionModel, SensorModel, TrajectorySpec, simulate_measurements, simulate_truth

SINGLE_OBJECT = ("cp", "clcp", "gpb1", "imm", "dgpb1", "dimm")
MULTI_OBJECT = ("gm_cphd", "cgm_cphd", "mdglmb", "cmdglmb", "lmb", "clmb")
CENTRALIZED = ("gpb1", "imm", "gm_cphd", "mdglmb", "lmb")
ALGORITHMS = SINGLE_OBJECT + MULTI_OBJECT
MODE_MATCHED = ("gpb1", "imm", "dgpb1", "dimm")

CSV_HEADER = "trial,step,node,metric,value"


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


def _get(d, key, default=None):
    return d.get(key, default) if isinstance(d, dict) else default


def _require(d, key, ctx):
    if not isinstance(d, dict) or key not in d or d[key] is None:
        raise ConfigError(f"{ctx}{key}: missing required field")
    return d[key]


def _as_int(value, ctx, minimum=None):
    try:
        out = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{ctx}: expected an integer, got {value!r}") from None
    if minimum is not None and out < minimum:
        raise ConfigError(f"{ctx}: must be at least {minimum}")
    return out


def _as_float(value, ctx):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{ctx}: expected a number, got {value!r}") from None


def _motion_from(d, ctx) -> MotionModel:
    if not isinstance(d, dict):
        raise ConfigError(f"{ctx}: expected a mapping")
    try:
        return MotionModel(kind=str(_require(d, "kind", ctx + ".")).lower(),
                           ts=_as_float(_require(d, "ts", ctx + "."), ctx + ".ts"),
                           sigma_w=_as_float(_get(d, "sigma_w", 0.0), ctx + ".sigma_w"),
                           omega_deg_s=_as_float(_get(d, "omega_deg_s", 0.0),
                                                 ctx + ".omega_deg_s"))
    except ValueError as e:
        raise ConfigError(f"{ctx}: {e}") from None


@dataclass(frozen=True)
class NodeSpec:
    kind: str
    position: tuple = (0.0, 0.0)
    sigma_range: float = 100.0
    sigma_bearing_deg: float = 1.0
    p_detect: float = 1.0
    lambda_c: float = 0.0
    range_max: float = 100000.0

    def sensor(self) -> Optional[SensorModel]:
        if self.kind == "com":
            return None
        return SensorModel(kind=self.kind, position=self.position,
                           sigma_range=self.sigma_range,
                           sigma_bearing_deg=self.sigma_bearing_deg,
                           p_detect=self.p_detect, lambda_c=self.lambda_c,
                           range_max=self.range_max)


@dataclass
class ExperimentConfig:
    algorithm: str
    steps: int
    nodes: tuple
    links: tuple
    motion: MotionModel
    truth_objects: tuple
    trials: int = 1
    seed: int = 0
    consensus_steps: int = 1
    out: Optional[str] = None
    workers: int = 1
    truth_noisy: bool = False
    ospa_params: OspaParams = field(default_factory=OspaParams)
    mode_models: tuple = ()
    transition: Optional[np.ndarray] = None
    mu0: Optional[np.ndarray] = None
    prior_mean: Optional[np.ndarray] = None
    prior_cov: Optional[np.ndarray] = None
    linearization: str = "ut"
    rho_strategy: str = "sensor_fraction"
    p_survive: float = 0.99
    p_detect: float = 0.99
    n_max: int = 25
    birth_rate: Optional[float] = None
    birth_r: float = 0.09
    birth_locations: tuple = ()
    birth_cov: Optional[np.ndarray] = None
    gamma_t: float = 1e-4
    gamma_m: float = 4.0
    gamma_e: float = 0.5
    n_comp_max: int = 25
    track_floor: float = 1e-3
    caps: GlmbCaps = field(default_factory=GlmbCaps)

    @classmethod
    def from_file(cls, path, overrides=None) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config: file not found: {path}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"config: cannot parse {path}: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config: top level must be a mapping")
        if overrides:
            raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw) -> "ExperimentConfig":
        algorithm = str(_require(raw, "algorithm", "")).lower().replace("-", "_")
        if algorithm not in ALGORITHMS:
            raise ConfigError(
                f"algorithm: unknown algorithm {algorithm!r}; expected one of "
                + ", ".join(ALGORITHMS))
        steps = _as_int(_require(raw, "steps", ""), "steps", minimum=1)
        trials = _as_int(_get(raw, "trials", 1), "trials", minimum=1)
        seed = _as_int(_get(raw, "seed", 0), "seed", minimum=0)
        consensus_steps = _as_int(_get(raw, "consensus_steps", 1),
                                  "consensus_steps", minimum=0)
        workers = _as_int(_get(raw, "workers", 1), "workers", minimum=1)
        out = _get(raw, "out")

        net = _require(raw, "network", "")
        node_dicts = _require(net, "nodes", "network.")
        if not node_dicts:
            raise ConfigError("network.nodes: at least one node required")
        nodes = []
        for i, nd in enumerate(node_dicts):
            ctx = f"network.nodes[{i}]"
            kind = str(_require(nd, "kind", ctx + ".")).lower()
            if kind not in ("toa", "doa", "radar", "com"):
                raise ConfigError(f"{ctx}.kind: unknown node kind {kind!r}")
            position = _get(nd, "position", (0.0, 0.0))
            if kind != "com":
                position = _require(nd, "position", ctx + ".")
            if len(position) != 2:
                raise ConfigError(f"{ctx}.position: expected [x, y]")
            try:
                nodes.append(NodeSpec(
                    kind=kind,
                    position=(float(position[0]), float(position[1])),
                    sigma_range=_as_float(_get(nd, "sigma_range", 100.0),
                                          ctx + ".sigma_range"),
                    sigma_bearing_deg=_as_float(_get(nd, "sigma_bearing_deg", 1.0),
                                                ctx + ".sigma_bearing_deg"),
                    p_detect=_as_float(_get(nd, "p_detect", 1.0), ctx + ".p_detect"),
                    lambda_c=_as_float(_get(nd, "lambda_c", 0.0), ctx + ".lambda_c"),
                    range_max=_as_float(_get(nd, "range_max", 100000.0),
                                        ctx + ".range_max")))
            except ValueError as e:
                raise ConfigError(f"{ctx}: {e}") from None
        links = []
        for k, link in enumerate(_get(net, "links", []) or []):
            if len(link) != 2:
                raise ConfigError(f"network.links[{k}]: expected [a, b]")
            a, b = int(link[0]), int(link[1])
            if not (0 <= a < len(nodes) and 0 <= b < len(nodes)):
                raise ConfigError(f"network.links[{k}]: node index out of range")
            links.append((a, b))

        motion = _motion_from(_require(raw, "motion", ""), "motion")

        truth = _require(raw, "truth", "")
        objs = _require(truth, "objects", "truth.")
        truth_objects = []
        for i, od in enumerate(objs):
            ctx = f"truth.objects[{i}]"
            x0 = _require(od, "x0", ctx + ".")
            segments = []
            for j, sd in enumerate(_get(od, "segments", []) or []):
                sctx = f"{ctx}.segments[{j}]"
                segments.append((_as_int(_require(sd, "step", sctx + "."),
                                         sctx + ".step", minimum=0),
                                 _motion_from(sd, sctx)))
            death = _get(od, "death")
            try:
                truth_objects.append(TrajectorySpec(
                    x0=x0,
                    birth_step=_as_int(_get(od, "birth", 0), ctx + ".birth", minimum=0),
                    death_step=None if death is None else _as_int(death, ctx + ".death"),
                    label=tuple(od["label"]) if _get(od, "label") is not None else None,
                    segments=tuple(segments)))
            except ValueError as e:
                raise ConfigError(f"{ctx}: {e}") from None
        truth_noisy = bool(_get(truth, "noisy", False))

        ospa_d = _get(raw, "ospa", {}) or {}
        try:
            ospa_params = OspaParams(p=_as_float(_get(ospa_d, "p", 2.0), "ospa.p"),
                                     c=_as_float(_get(ospa_d, "c", 600.0), "ospa.c"))
        except ValueError as e:
            raise ConfigError(f"ospa: {e}") from None

        mode_models = ()
        transition = None
        mu0 = None
        if algorithm in MODE_MATCHED:
            modes = _require(raw, "modes", "")
            model_dicts = _require(modes, "models", "modes.")
            if len(model_dicts) < 2:
                raise ConfigError("modes.models: at least two modes required")
            mode_models = tuple(_motion_from(md, f"modes.models[{j}]")
                                for j, md in enumerate(model_dicts))
            transition = np.atleast_2d(np.asarray(_require(modes, "transition", "modes."),
                                                  dtype=float))
            if transition.shape != (len(mode_models), len(mode_models)):
                raise ConfigError("modes.transition: shape must match the mode count")
            if np.any(transition < 0.0) or not np.allclose(transition.sum(axis=1), 1.0,
                                                           atol=1e-9):
                raise ConfigError("modes.transition: rows must be probability vectors")
            mu0_raw = _get(modes, "mu0")
            if mu0_raw is None:
                mu0 = np.full(len(mode_models), 1.0 / len(mode_models))
            else:
                mu0 = np.asarray(mu0_raw, dtype=float)
                if mu0.shape != (len(mode_models),) or np.any(mu0 < 0.0) \
                        or abs(float(mu0.sum()) - 1.0) > 1e-9:
                    raise ConfigError("modes.mu0: must be a probability vector over modes")

        filt = _get(raw, "filter", {}) or {}
        prior_mean = None
        prior_cov = None
        if _get(filt, "prior_mean") is not None:
            prior_mean = np.asarray(filt["prior_mean"], dtype=float)
        if _get(filt, "prior_cov") is not None:
            pc = np.asarray(filt["prior_cov"], dtype=float)
            prior_cov = np.diag(pc) if pc.ndim == 1 else pc
        linearization = str(_get(filt, "linearization", "ut")).lower()
        if linearization not in ("ut", "jacobian"):
            raise ConfigError(f"filter.linearization: unknown mode {linearization!r}")
        rho_strategy = str(_get(filt, "rho_strategy", "sensor_fraction")).lower()
        if rho_strategy not in ("sensor_fraction", "network_size", "min_inverse_weight"):
            raise ConfigError(f"filter.rho_strategy: unknown strategy {rho_strategy!r}")

        rfs = _get(raw, "rfs", {}) or {}
        birth = _get(rfs, "birth", {}) or {}
        birth_locations = tuple(np.asarray(loc, dtype=float)
                                for loc in (_get(birth, "locations", []) or []))
        for j, loc in enumerate(birth_locations):
            if loc.shape != (4,):
                raise ConfigError(f"rfs.birth.locations[{j}]: expected 4 state entries")
        birth_cov = None
        if _get(birth, "cov_diag") is not None:
            birth_cov = np.diag(np.asarray(birth["cov_diag"], dtype=float))
        caps_d = _get(rfs, "caps", {}) or {}
        caps = GlmbCaps(
            cap_per_hypothesis=_as_int(_get(caps_d, "cap_per_hypothesis",
                                            DEFAULT_CAPS.cap_per_hypothesis),
                                       "rfs.caps.cap_per_hypothesis", minimum=1),
            assoc_cap=_as_int(_get(caps_d, "assoc_cap", DEFAULT_CAPS.assoc_cap),
                              "rfs.caps.assoc_cap", minimum=1),
            global_cap=_as_int(_get(caps_d, "global_cap", DEFAULT_CAPS.global_cap),
                               "rfs.caps.global_cap", minimum=1),
            exhaustive_measurements=_as_int(
                _get(caps_d, "exhaustive_measurements",
                     DEFAULT_CAPS.exhaustive_measurements),
                "rfs.caps.exhaustive_measurements", minimum=0),
            exhaustive_labels=_as_int(_get(caps_d, "exhaustive_labels",
                                           DEFAULT_CAPS.exhaustive_labels),
                                      "rfs.caps.exhaustive_labels", minimum=0),
            expand_cap=_as_int(_get(caps_d, "expand_cap", DEFAULT_CAPS.expand_cap),
                               "rfs.caps.expand_cap", minimum=1))

        cfg = cls(
            algorithm=algorithm, steps=steps, trials=trials, seed=seed,
            consensus_steps=consensus_steps, out=out, workers=workers,
            nodes=tuple(nodes), links=tuple(links), motion=motion,
            truth_objects=tuple(truth_objects), truth_noisy=truth_noisy,
            ospa_params=ospa_params, mode_models=mode_models,
            transition=transition, mu0=mu0, prior_mean=prior_mean,
            prior_cov=prior_cov, linearization=linearization,
            rho_strategy=rho_strategy,
            p_survive=_as_float(_get(rfs, "p_survive", 0.99), "rfs.p_survive"),
            p_detect=_as_float(_get(rfs, "p_detect", 0.99), "rfs.p_detect"),
            n_max=_as_int(_get(rfs, "n_max", 25), "rfs.n_max", minimum=1),
            birth_rate=None if _get(rfs, "birth_rate") is None
            else _as_float(rfs["birth_rate"], "rfs.birth_rate"),
            birth_r=_as_float(_get(birth, "r", 0.09), "rfs.birth.r"),
            birth_locations=birth_locations, birth_cov=birth_cov,
            gamma_t=_as_float(_get(rfs, "gamma_t", 1e-4), "rfs.gamma_t"),
            gamma_m=_as_float(_get(rfs, "gamma_m", 4.0), "rfs.gamma_m"),
            gamma_e=_as_float(_get(rfs, "gamma_e", 0.5), "rfs.gamma_e"),
            n_comp_max=_as_int(_get(rfs, "n_comp_max", 25), "rfs.n_comp_max", minimum=1),
            track_floor=_as_float(_get(rfs, "track_floor", 1e-3), "rfs.track_floor"),
            caps=caps)
        cfg.validate()
        return cfg

    def validate(self):
        sensor_nodes = [i for i, n in enumerate(self.nodes) if n.kind != "com"]
        if not sensor_nodes:
            raise ConfigError("network.nodes: at least one sensor node required")
        if self.algorithm in SINGLE_OBJECT:
            if len(self.truth_objects) != 1:
                raise ConfigError(
                    "truth.objects: single-object algorithms require exactly one object")
            spec = self.truth_objects[0]
            if spec.birth_step != 0 or (spec.death_step is not None
                                        and spec.death_step < self.steps):
                raise ConfigError(
                    "truth.objects[0]: object must be alive for the whole run")
            for i, n in enumerate(self.nodes):
                if n.lambda_c != 0.0:
                    raise ConfigError(
                        f"network.nodes[{i}].lambda_c: must be 0 for single-object algorithms")
            if self.prior_mean is None or self.prior_cov is None:
                raise ConfigError(
                    "filter.prior_mean: required for single-object algorithms")
            if self.prior_mean.shape != (4,):
                raise ConfigError("filter.prior_mean: expected 4 state entries")
            if self.prior_cov.shape != (4, 4):
                raise ConfigError("filter.prior_cov: expected a 4x4 covariance")
        if self.algorithm in ("gpb1", "imm"):
            for i, n in enumerate(self.nodes):
                if n.kind != "com" and n.p_detect != 1.0:
                    raise ConfigError(
                        f"network.nodes[{i}].p_detect: centralized mode-matched "
                        "filters require unity detection")
        if self.algorithm in MULTI_OBJECT:
            if not self.birth_locations:
                raise ConfigError(
                    "rfs.birth.locations: required for multi-object algorithms")
            if self.birth_cov is None:
                raise ConfigError(
                    "rfs.birth.cov_diag: required for multi-object algorithms")
            if not (0.0 < self.birth_r < 1.0):
                raise ConfigError("rfs.birth.r: must lie strictly between 0 and 1")
            if not (0.0 < self.p_detect <= 1.0):
                raise ConfigError("rfs.p_detect: must lie in (0, 1]")
            if not (0.0 < self.p_survive <= 1.0):
                raise ConfigError("rfs.p_survive: must lie in (0, 1]")
            for i in (j for j, n in enumerate(self.nodes) if n.kind != "com"):
                if self.nodes[i].lambda_c <= 0.0:
                    raise ConfigError(
                        f"network.nodes[{i}].lambda_c: must be positive for "
                        "multi-object algorithms (the update divides by the "
                        "clutter intensity)")

    # -- derived pieces ----------------------------------------------------

    def graph(self) -> NetworkGraph:
        roles = tuple(SENSOR if n.kind != "com" else COMMUNICATION for n in self.nodes)
        return NetworkGraph(roles=roles, arcs=symmetric_arcs(self.links))

    def sensors(self):
        """(sensor list, node index -> sensor index or None)."""
        sensors = []
        node_to_sensor = []
        for n in self.nodes:
            s = n.sensor()
            if s is None:
                node_to_sensor.append(None)
            else:
                node_to_sensor.append(len(sensors))
                sensors.append(s)
        return sensors, node_to_sensor

    def birth_lmb(self, step: int) -> Lmb:
        tracks = []
        for i, loc in enumerate(self.birth_locations):
            gm = GaussianMixture(((1.0, Gaussian(loc, self.birth_cov)),))
            tracks.append(LmbTrack((step, i), self.birth_r, gm))
        return Lmb(tuple(tracks))

    def birth_intensity(self) -> GaussianMixture:
        comps = tuple((self.birth_r, Gaussian(loc, self.birth_cov))
                      for loc in self.birth_locations)
        return GaussianMixture(comps)

    def birth_cardinality(self) -> np.ndarray:
        rate = self.birth_rate
        if rate is None:
            rate = self.birth_r * len(self.birth_locations)
        return CardinalityPmf.poisson(rate, self.n_max).rho


# -- scenario assembly ------------------------------------------------------


def _linear_motion_nl(motion: MotionModel, sensor: Optional[SensorModel]):
    """NonlinearModel wrapping a linear motion with a sensor's h (or none)."""
    A, Q = motion.matrices()
    if sensor is None:
        return LinearModel(A, Q)
    return NonlinearModel(f=lambda x, A=A: A @ x, h=sensor.h, Q=Q,
                          R=sensor.noise_cov(),
                          jac_f=lambda x, A=A: A,
                          residual=sensor.residual)


def _stacked_sensor(sensors: Sequence[SensorModel]):
    """One virtual sensor measuring the concatenation of all sensors."""
    def h(x):
        return np.concatenate([s.h(x) for s in sensors])

    def residual(y, yhat):
        e = np.asarray(y, dtype=float) - np.asarray(yhat, dtype=float)
        off = 0
        for s in sensors:
            e[off:off + s.dim] = s.residual(y[off:off + s.dim],
                                            yhat[off:off + s.dim])
            off += s.dim
        return e

    R = block_diag(*[s.noise_cov() for s in sensors])
    return h, R, residual


def _simulate(cfg: ExperimentConfig, trial: int):
    """(truth, scans) for one trial; scans[k][s] is sensor s's list at step k."""
    sensors, _ = cfg.sensors()
    truth_rng = stream(cfg.seed, trial)
    truth = simulate_truth(cfg.truth_objects, cfg.motion, cfg.steps,
                           rng=truth_rng, noisy=cfg.truth_noisy)
    sensor_rngs = [stream(cfg.seed, trial, 1 + s) for s in range(len(sensors))]
    scans = []
    for k in range(cfg.steps):
        scans.append([simulate_measurements(truth[k], [sensor], rng)[0]
                      for sensor, rng in zip(sensors, sensor_rngs)])
    return truth, scans


def _truth_positions(truth_step):
    return [np.array([x[0], x[2]]) for _, x in truth_step]


def _pos_error(mean, x_true) -> float:
    return float(math.hypot(mean[0] - x_true[0], mean[2] - x_true[2]))


# -- per-algorithm trial runners --------------------------------------------


def _run_consensus_single(cfg: ExperimentConfig, trial: int, truth, scans):
    graph = cfg.graph()
    weights = metropolis_weights(graph)
    sensors, node_to_sensor = cfg.sensors()
    models = [_linear_motion_nl(cfg.motion, None if s is None else sensors[s])
              for s in node_to_sensor]
    states = [Gaussian(cfg.prior_mean, cfg.prior_cov)] * graph.n_nodes
    rows = []
    for k in range(cfg.steps):
        ys = []
        for i, s in enumerate(node_to_sensor):
            scan = scans[k][s] if s is not None else []
            ys.append(scan[0] if scan else None)
        if cfg.algorithm == "cp":
            states = cp_step(states, ys, models, weights, cfg.consensus_steps,
                             mode=cfg.linearization)
        else:
            states = clcp_step(states, ys, models, weights, cfg.consensus_steps,
                               rho_strategy=cfg.rho_strategy,
                               mode=cfg.linearization)
        x_true = truth[k][0][1]
        for i in range(graph.n_nodes):
            rows.append((trial, k, i, "pos_err", _pos_error(states[i].mean, x_true)))
    return rows, {}


def _jump_matrix(cfg: ExperimentConfig) -> np.ndarray:
    # config rows are P(next | current); internal convention indexes
    # jump[next, current]
    return cfg.transition.T.copy()


def _run_mm_distributed(cfg: ExperimentConfig, trial: int, truth, scans):
    graph = cfg.graph()
    weights = metropolis_weights(graph)
    sensors, node_to_sensor = cfg.sensors()
    jump = _jump_matrix(cfg)
    models = []
    for s_idx in node_to_sensor:
        sensor = None if s_idx is None else sensors[s_idx]
        modes = tuple(_linear_motion_nl(m, sensor) for m in cfg.mode_models)
        models.append(JumpMarkovModel(modes=modes, jump=jump,
                                      linearization=cfg.linearization))
    prior = Gaussian(cfg.prior_mean, cfg.prior_cov)
    banks = [ModeBank((prior,) * len(cfg.mode_models), cfg.mu0)] * graph.n_nodes
    step_fn = dgpb1_step if cfg.algorithm == "dgpb1" else dimm_step
    rows = []
    for k in range(cfg.steps):
        ys = []
        for i, s in enumerate(node_to_sensor):
            scan = scans[k][s] if s is not None else []
            ys.append(scan[0] if scan else None)
        banks = step_fn(banks, ys, models, weights, cfg.consensus_steps)
        x_true = truth[k][0][1]
        for i in range(graph.n_nodes):
            est = bank_fused(banks[i]).mean
            rows.append((trial, k, i, "pos_err", _pos_error(est, x_true)))
    return rows, {}


def _run_mm_centralized(cfg: ExperimentConfig, trial: int, truth, scans):
    sensors, _ = cfg.sensors()
    h, R, residual = _stacked_sensor(sensors)
    jump = _jump_matrix(cfg)
    modes = []
    for m in cfg.mode_models:
        A, Q = m.matrices()
        modes.append(NonlinearModel(f=lambda x, A=A: A @ x, h=h, Q=Q, R=R,
                                    jac_f=lambda x, A=A: A, residual=residual))
    model = JumpMarkovModel(modes=tuple(modes), jump=jump,
                            linearization=cfg.linearization)
    bank = ModeBank((Gaussian(cfg.prior_mean, cfg.prior_cov),) * len(modes), cfg.mu0)
    step_fn = gpb1_step if cfg.algorithm == "gpb1" else imm_step
    rows = []
    for k in range(cfg.steps):
        y = np.concatenate([scans[k][s][0] for s in range(len(sensors))])
        bank, fused = step_fn(bank, y, model)
        x_true = truth[k][0][1]
        rows.append((trial, k, 0, "pos_err", _pos_error(fused.mean, x_true)))
    return rows, {}


def _cphd_models(cfg: ExperimentConfig):
    sensors, node_to_sensor = cfg.sensors()
    motion = cfg.motion.linear_model()
    birth_card = cfg.birth_cardinality()
    birth_int = cfg.birth_intensity()
    models = []
    for s_idx in node_to_sensor:
        sensor = None if s_idx is None else sensors[s_idx]
        models.append(CphdModel(
            motion=motion, birth_cardinality=birth_card,
            birth_intensity=birth_int, p_survive=cfg.p_survive,
            p_detect=cfg.p_detect,
            measurement=None if sensor is None else sensor.measurement_model(),
            kappa=0.0 if sensor is None else sensor.kappa,
            linearization=cfg.linearization))
    return models


def _empty_cphd(cfg: ExperimentConfig) -> CphdState:
    return CphdState(CardinalityPmf.delta(0, cfg.n_max), GaussianMixture(()))


def _run_cphd_distributed(cfg: ExperimentConfig, trial: int, truth, scans):
    graph = cfg.graph()
    weights = metropolis_weights(graph)
    _, node_to_sensor = cfg.sensors()
    models = _cphd_models(cfg)
    thresholds = GmThresholds(gamma_t=cfg.gamma_t, gamma_m=cfg.gamma_m,
                              n_comp_max=cfg.n_comp_max, gamma_e=cfg.gamma_e)
    states = [_empty_cphd(cfg) for _ in range(graph.n_nodes)]
    rows = []
    cards = {}
    for k in range(cfg.steps):
        node_scans = [scans[k][s] if s is not None else None
                      for s in node_to_sensor]
        states = cgm_cphd_node_step(states, node_scans, models, graph, weights,
                                    cfg.consensus_steps, thresholds)
        truth_pos = _truth_positions(truth[k])
        for i in range(graph.n_nodes):
            ests = cphd_extract(states[i], cfg.gamma_e)
            est_pos = [np.array([m[0], m[2]]) for m in ests]
            rows.append((trial, k, i, "ospa",
                         ospa(est_pos, truth_pos, cfg.ospa_params)))
            cards[(k, i)] = len(ests)
    return rows, {"cardinality": cards}


def _run_cphd_centralized(cfg: ExperimentConfig, trial: int, truth, scans):
    sensors, _ = cfg.sensors()
    motion = cfg.motion.linear_model()
    thresholds = GmThresholds(gamma_t=cfg.gamma_t, gamma_m=cfg.gamma_m,
                              n_comp_max=cfg.n_comp_max, gamma_e=cfg.gamma_e)
    models = [CphdModel(motion=motion, birth_cardinality=cfg.birth_cardinality(),
                        birth_intensity=cfg.birth_intensity(),
                        p_survive=cfg.p_survive, p_detect=cfg.p_detect,
                        measurement=s.measurement_model(), kappa=s.kappa,
                        linearization=cfg.linearization)
              for s in sensors]
    state = _empty_cphd(cfg)
    rows = []
    cards = {}
    for k in range(cfg.steps):
        post = cphd_predict(state, models[0])
        for s in range(len(sensors)):
            post = cphd_correct(post, scans[k][s], models[s])
        post = CphdState(post.cardinality, _housekeep(post.intensity, thresholds))
        state = CphdState(post.cardinality,
                          prune(post.intensity, thresholds.n_comp_max))
        ests = cphd_extract(state, cfg.gamma_e)
        est_pos = [np.array([m[0], m[2]]) for m in ests]
        truth_pos = _truth_positions(truth[k])
        rows.append((trial, k, 0, "ospa", ospa(est_pos, truth_pos, cfg.ospa_params)))
        cards[(k, 0)] = len(ests)
    return rows, {"cardinality": cards}


def _labeled_models(cfg: ExperimentConfig, birth: Lmb):
    sensors, node_to_sensor = cfg.sensors()
    motion = cfg.motion.linear_model()
    models = []
    for s_idx in node_to_sensor:
        sensor = None if s_idx is None else sensors[s_idx]
        models.append(LabeledModel(
            motion=motion, birth=birth, p_survive=cfg.p_survive,
            p_detect=cfg.p_detect,
            measurement=None if sensor is None else sensor.measurement_model(),
            kappa=1.0 if sensor is None else sensor.kappa,
            caps=cfg.caps, gamma_m=cfg.gamma_m, n_comp_max=cfg.n_comp_max,
            track_floor=cfg.track_floor, linearization=cfg.linearization))
    return models


def _run_labeled_distributed(cfg: ExperimentConfig, trial: int, truth, scans):
    graph = cfg.graph()
    weights = metropolis_weights(graph)
    _, node_to_sensor = cfg.sensors()
    lmb_mode = cfg.algorithm == "clmb"
    if lmb_mode:
        states = [Lmb(()) for _ in range(graph.n_nodes)]
    else:
        states = [DeltaGlmb((Hypothesis((), (), 1.0, ()),))
                  for _ in range(graph.n_nodes)]
    rows = []
    cards = {}
    for k in range(cfg.steps):
        birth = cfg.birth_lmb(k)
        models = _labeled_models(cfg, birth)
        node_scans = [scans[k][s] if s is not None else None
                      for s in node_to_sensor]
        if lmb_mode:
            states = consensus_lmb_step(states, node_scans, models, graph,
                                        weights, cfg.consensus_steps)
        else:
            states = consensus_mdglmb_step(states, node_scans, models, graph,
                                           weights, cfg.consensus_steps)
        truth_pos = _truth_positions(truth[k])
        for i in range(graph.n_nodes):
            ests = lmb_extract(states[i]) if lmb_mode else mdglmb_extract(states[i])
            est_pos = [np.array([x[0], x[2]]) for _, x in ests]
            rows.append((trial, k, i, "ospa",
                         ospa(est_pos, truth_pos, cfg.ospa_params)))
            cards[(k, i)] = len(ests)
    return rows, {"cardinality": cards}


def _run_labeled_centralized(cfg: ExperimentConfig, trial: int, truth, scans):
    sensors, _ = cfg.sensors()
    motion = cfg.motion.linear_model()
    lmb_mode = cfg.algorithm == "lmb"
    state = Lmb(()) if lmb_mode else DeltaGlmb((Hypothesis((), (), 1.0, ()),))
    rows = []
    cards = {}
    for k in range(cfg.steps):
        birth = cfg.birth_lmb(k)
        if lmb_mode:
            state = lmb_predict(state, birth, cfg.p_survive, motion,
                                mode=cfg.linearization)
            for s, sensor in enumerate(sensors):
                state = lmb_update(state, scans[k][s], cfg.p_detect,
                                   sensor.measurement_model(), sensor.kappa,
                                   caps=cfg.caps, mode=cfg.linearization)
            state = lmb_housekeep(state, cfg.gamma_m, cfg.n_comp_max,
                                  r_min=cfg.track_floor)
            ests = lmb_extract(state)
        else:
            state = dglmb_predict(state, birth, cfg.p_survive, motion,
                                  caps=cfg.caps, mode=cfg.linearization)
            for s, sensor in enumerate(sensors):
                state = dglmb_update(state, scans[k][s], cfg.p_detect,
                                     sensor.measurement_model(), sensor.kappa,
                                     caps=cfg.caps, mode=cfg.linearization)
            state = mdglmb_marginalize(state)
            state = dglmb_housekeep(state, cfg.gamma_m, cfg.n_comp_max)
            state = _cap_hypotheses(state, cfg.caps.global_cap)
            ests = mdglmb_extract(state)
        est_pos = [np.array([x[0], x[2]]) for _, x in ests]
        truth_pos = _truth_positions(truth[k])
        rows.append((trial, k, 0, "ospa", ospa(est_pos, truth_pos, cfg.ospa_params)))
        cards[(k, 0)] = len(ests)
    return rows, {"cardinality": cards}


_RUNNERS = {
    "cp": _run_consensus_single,
    "clcp": _run_consensus_single,
    "dgpb1": _run_mm_distributed,
    "dimm": _run_mm_distributed,
    "gpb1": _run_mm_centralized,
    "imm": _run_mm_centralized,
    "cgm_cphd": _run_cphd_distributed,
    "gm_cphd": _run_cphd_centralized,
    "cmdglmb": _run_labeled_distributed,
    "clmb": _run_labeled_distributed,
    "mdglmb": _run_labeled_centralized,
    "lmb": _run_labeled_centralized,
}


def output_nodes(cfg: ExperimentConfig) -> int:
    return 1 if cfg.algorithm in CENTRALIZED else len(cfg.nodes)


def run_single_trial(cfg: ExperimentConfig, trial: int):
    """Rows and extras for one trial; pure given (config, trial)."""
    truth, scans = _simulate(cfg, trial)
    rows, extras = _RUNNERS[cfg.algorithm](cfg, trial, truth, scans)
    extras["truth_cardinality"] = [len(truth[k]) for k in range(cfg.steps)]
    return rows, extras


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run all trials, write CSV and summary JSON (if an output directory is
    set), and return {"rows": ..., "summary": ...}."""
    trials = list(range(cfg.trials))
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(lambda t: run_single_trial(cfg, t), trials))
    else:
        results = [run_single_trial(cfg, t) for t in trials]
    rows = []
    card_by_step = {}
    for trial_rows, extras in results:
        rows.extend(trial_rows)
        for (k, _i), c in extras.get("cardinality", {}).items():
            card_by_step.setdefault(k, []).append(c)
    truth_card = results[0][1]["truth_cardinality"]

    n_nodes = output_nodes(cfg)
    expected = cfg.trials * cfg.steps * n_nodes
    if len(rows) != expected:
        raise RuntimeError(f"row invariant violated: {len(rows)} != {expected}")

    metric = rows[0][3]
    values = np.array([r[4] for r in rows])
    per_step = np.zeros(cfg.steps)
    for r in rows:
        per_step[r[1]] += r[4]
    per_step /= cfg.trials * n_nodes
    summary = {
        "algorithm": cfg.algorithm,
        "trials": cfg.trials,
        "steps": cfg.steps,
        "nodes": n_nodes,
        "seed": cfg.seed,
        "consensus_steps": cfg.consensus_steps,
        "metric": metric,
        "mean": float(values.mean()),
        "per_step_mean": [float(v) for v in per_step],
        "true_cardinality_per_step": [int(c) for c in truth_card],
    }
    if metric == "pos_err":
        summary["prmse"] = float(np.sqrt(np.mean(values ** 2)))
    if card_by_step:
        summary["mean_cardinality_per_step"] = [
            float(np.mean(card_by_step[k])) for k in range(cfg.steps)]
    result = {"rows": rows, "summary": summary}
    if cfg.out:
        write_outputs(cfg.out, rows, summary)
    return result


def format_value(v: float) -> str:
    return "%.17g" % v


def write_outputs(out_dir: str, rows, summary) -> None:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "results.csv")
    with open(csv_path, "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        for trial, step, node, metric, value in rows:
            fh.write(f"{trial},{step},{node},{metric},{format_value(value)}\n")
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_rows(csv_path: str):
    """Parse a results CSV back into row tuples."""
    out = []
    with open(csv_path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header: {header!r}")
        for line in fh:
            trial, step, node, metric, value = line.strip().split(",")
            out.append((int(trial), int(step), int(node), metric, float(value)))
    return out
