"""Surrogate "real" environment.

The real participant is stood in for by a perturbed copy of the nominal arm
model, observed through a 60 Hz joint-angle pipeline that adds a constant
bias and white noise. The controller still shapes actions with the nominal
model, so the two disagree the same way a scaled model and a real body do.
None of the magnitudes below are measured; they are knobs.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import IO, NamedTuple

import numpy as np

from .environment import Motion
from .kinematics import HumanModel, JointAngles, Point2, solve_postures, OBJECT_LENGTH
from .risk import InfeasiblePathError, RiskSummary, erg_level, pain_state


@dataclass(frozen=True)
class GapConfig:
    segment_length_error: float = 0.03
    joint_bias: float = 2.0
    angle_noise_sigma: float = 1.0
    sensor_rate: float = 60.0
    ee_speed: float = 0.05
    per_step_overhead: float = 1.0

    def __post_init__(self):
        if not (self.sensor_rate > 0 and self.ee_speed > 0):
            raise ValueError("sensor rate and end-effector speed must be positive")
        if not 0 <= self.segment_length_error <= 0.2:
            raise ValueError("segment_length_error must lie in [0, 0.2]")
        if self.angle_noise_sigma < 0 or self.per_step_overhead < 0:
            raise ValueError("noise and overhead must be non-negative")


ZERO_GAP = GapConfig(segment_length_error=0.0, joint_bias=0.0, angle_noise_sigma=0.0)


class SensorSample(NamedTuple):
    timestamp: float
    joint_angles: JointAngles


def _streams(seed):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def perturb_model(model: HumanModel, cfg: GapConfig, seed) -> HumanModel:
    """Scale each segment by ``1 + e``, ``e ~ U(-err, err)``; anchor untouched."""
    rng = _streams(seed)[0]
    err = cfg.segment_length_error
    e1, e2 = rng.uniform(-err, err, size=2) if err > 0 else (0.0, 0.0)
    return replace(model, l_upper=model.l_upper * (1.0 + e1), l_fore=model.l_fore * (1.0 + e2))


class SensorPipeline:
    """Corrupts true joint angles with a fixed per-joint bias and white noise."""

    def __init__(self, cfg: GapConfig, seed):
        _, bias_rng, self.noise_rng = _streams(seed)
        signs = bias_rng.choice([-1.0, 1.0], size=2)
        self.bias = cfg.joint_bias * signs
        self.sigma = cfg.angle_noise_sigma
        self.rate = cfg.sensor_rate
        self.clock = 0.0

    def read(self, shoulder: np.ndarray, elbow: np.ndarray):
        n = len(shoulder)
        if self.sigma > 0:
            noise = self.noise_rng.normal(0.0, self.sigma, size=(n, 2))
        else:
            noise = np.zeros((n, 2))
        ts = self.clock + np.arange(n) / self.rate
        self.clock = ts[-1] + 1.0 / self.rate if n else self.clock
        return ts, shoulder + self.bias[0] + noise[:, 0], elbow + self.bias[1] + noise[:, 1]


def tick_positions(a: Point2, b: Point2, cfg: GapConfig):
    """Object positions seen at each sensor tick while moving a -> b."""
    dist = math.hypot(b[0] - a[0], b[1] - a[1])
    travel = dist / cfg.ee_speed
    n = int(math.floor(travel * cfg.sensor_rate + 1e-9)) + 1
    t = np.arange(n) / cfg.sensor_rate
    frac = np.minimum(t / travel, 1.0) if travel > 0 else np.zeros(n)
    return a[0] + frac * (b[0] - a[0]), a[1] + frac * (b[1] - a[1]), dist


def simulate_motion(true_model: HumanModel, pipeline: SensorPipeline, from_obj: Point2,
                    to_obj: Point2, cfg: GapConfig, l_object: float = OBJECT_LENGTH):
    """Move at ``cfg.ee_speed`` and average risks over corrupted sensor samples.

    Object positions are world-frame. Returns ``(RiskSummary, elapsed, samples)``
    with ``samples`` a structured array (timestamp, shoulder, elbow, erg, pain).
    """
    xs, zs, dist = tick_positions(from_obj, to_obj, cfg)
    shoulder, elbow, ok = solve_postures(true_model, xs + l_object / 2.0, zs)
    if not ok.all():
        raise InfeasiblePathError("the perturbed arm cannot follow this path")
    ts, s_obs, e_obs = pipeline.read(shoulder, elbow)
    erg = erg_level(s_obs, e_obs)
    pain = pain_state(e_obs)
    samples = np.rec.fromarrays([ts, s_obs, e_obs, np.atleast_1d(erg), np.atleast_1d(pain)],
                                names="timestamp,shoulder,elbow,erg,pain")
    risk = RiskSummary(float(np.mean(erg)), float(np.mean(pain)))
    elapsed = dist / cfg.ee_speed + cfg.per_step_overhead
    return risk, elapsed, samples


class SurrogateObserver:
    """Risk source for real-mode episodes; pain on any sample aborts the episode.

    A path the perturbed arm cannot follow is reported as a pain event: the
    participant would have to over-reach.
    """
    real = True

    def __init__(self, nominal: HumanModel, cfg: GapConfig = GapConfig(), seed=0,
                 dump: IO[str] | None = None):
        self.cfg = cfg
        self.seed = seed
        self.true_model = perturb_model(nominal, cfg, seed)
        self.pipeline = SensorPipeline(cfg, seed)
        self._writer = None
        if dump is not None:
            self._writer = csv.writer(dump)
            self._writer.writerow(["timestamp", "shoulder", "elbow", "erg", "pain"])

    def motion(self, model: HumanModel, a_world: Point2, b_world: Point2,
               l_object: float) -> Motion:
        try:
            risk, elapsed, samples = simulate_motion(self.true_model, self.pipeline, a_world,
                                                     b_world, self.cfg, l_object)
        except InfeasiblePathError:
            dist = math.hypot(b_world[0] - a_world[0], b_world[1] - a_world[1])
            return Motion(RiskSummary(4.0, 1.0), dist / self.cfg.ee_speed
                          + self.cfg.per_step_overhead, True)
        if self._writer is not None:
            for rec in samples:
                self._writer.writerow([f"{rec.timestamp:.6f}", f"{rec.shoulder:.4f}",
                                       f"{rec.elbow:.4f}", int(rec.erg), int(rec.pain)])
        return Motion(risk, elapsed, bool(samples.pain.any()))


def real_env(preset, kind: str = "dqn", cfg: GapConfig = GapConfig(), seed=0, ws=None,
             dump: IO[str] | None = None, **env_kwargs):
    """A :class:`TransportEnv` whose risks come from the surrogate participant."""
    from .environment import TransportEnv
    observer = SurrogateObserver(preset.model(), cfg, seed, dump)
    return TransportEnv(preset, kind, ws, observer=observer, **env_kwargs)


def real_mode_step(env, action_index: int):
    """Environment step measured through the surrogate; any pain sample aborts."""
    if not env.real:
        raise ValueError("environment is not in surrogate-real mode")
    return env.step(action_index)
