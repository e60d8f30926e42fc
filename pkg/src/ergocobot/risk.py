"""RULA-based ergonomic scoring, elbow pain predicate and path-averaged risk."""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .kinematics import HumanModel, JointAngles, Point2, solve_postures, OBJECT_LENGTH

DEFAULT_SAMPLE_STEP = 0.01

# RULA posture-A slice, wrist score 1, wrist twist 1; rows upper arm 1..4,
# columns lower arm 1..2
POSTURE_A = np.array([
    [1, 2],
    [2, 2],
    [3, 3],
    [4, 4],
])

PAIN_INTERVALS = ((0.0, 30.0), (115.0, 150.0))


class InfeasiblePathError(ValueError):
    """A sampled posture along a path has no limit-respecting IK solution."""


class RiskSummary(NamedTuple):
    avg_erg: float
    avg_pain: float


def upper_arm_score(shoulder):
    s = np.asarray(shoulder, dtype=float)
    score = np.where(s > 90, 4, np.where(s > 45, 3, np.where(s > 20, 2, np.where(s < -20, 2, 1))))
    return int(score) if score.ndim == 0 else score


def lower_arm_score(elbow):
    e = np.asarray(elbow, dtype=float)
    score = np.where((e >= 60) & (e <= 100), 1, 2)
    return int(score) if score.ndim == 0 else score


def erg_level(shoulder, elbow=None):
    """RULA posture-A score for a (shoulder, elbow) posture or arrays of them."""
    if elbow is None:
        shoulder, elbow = shoulder
    ua = np.asarray(upper_arm_score(shoulder))
    la = np.asarray(lower_arm_score(elbow))
    out = POSTURE_A[ua - 1, la - 1]
    return int(out) if out.ndim == 0 else out


def pain_state(elbow):
    """1 when the elbow sits in a painful arc of the contracture, else 0.

    Kept as the single pain predicate so a different pain source can be
    dropped in without touching the callers.
    """
    e = np.asarray(elbow, dtype=float)
    hit = np.zeros(e.shape, dtype=bool)
    for lo, hi in PAIN_INTERVALS:
        hit |= (e >= lo) & (e <= hi)
    out = hit.astype(int)
    return int(out) if out.ndim == 0 else out


def sample_segment(a: Point2, b: Point2, step: float = DEFAULT_SAMPLE_STEP):
    """Evenly spaced points from ``a`` to ``b`` inclusive, spacing <= step."""
    if step <= 0:
        raise ValueError("step must be positive")
    length = math.hypot(b[0] - a[0], b[1] - a[1])
    n = max(1, math.ceil(length / step - 1e-9)) if length > 0 else 0
    t = np.linspace(0.0, 1.0, n + 1)
    return a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])


def posture_risks(model: HumanModel, xs, zs, l_object: float = OBJECT_LENGTH):
    """Per-sample (erg, pain, ok) for object positions in world coordinates."""
    ee_x = np.asarray(xs) + l_object / 2.0
    shoulder, elbow, ok = solve_postures(model, ee_x, np.asarray(zs))
    erg = np.where(ok, erg_level(np.nan_to_num(shoulder), np.nan_to_num(elbow)), 0)
    pain = np.where(ok, pain_state(np.nan_to_num(elbow, nan=-1.0)), 0)
    return erg, pain, ok


def point_risk(model: HumanModel, obj: Point2, l_object: float = OBJECT_LENGTH) -> RiskSummary:
    return path_risk(model, obj, obj, DEFAULT_SAMPLE_STEP, l_object)


def path_risk(model: HumanModel, from_obj: Point2, to_obj: Point2,
              step: float = DEFAULT_SAMPLE_STEP,
              l_object: float = OBJECT_LENGTH) -> RiskSummary:
    """Mean ergonomic level and pain indicator along a straight object move.

    Object positions are in the world frame; the start point is included.
    """
    xs, zs = sample_segment(from_obj, to_obj, step)
    erg, pain, ok = posture_risks(model, xs, zs, l_object)
    if not ok.all():
        bad = int(np.argmin(ok))
        raise InfeasiblePathError(
            f"no valid posture at object position ({xs[bad]:.4f}, {zs[bad]:.4f})")
    return RiskSummary(float(erg.mean()), float(pain.mean()))


def risk_of_posture(q: JointAngles) -> RiskSummary:
    return RiskSummary(float(erg_level(q.shoulder, q.elbow)), float(pain_state(q.elbow)))


__all__ = [
    "InfeasiblePathError", "RiskSummary", "upper_arm_score", "lower_arm_score",
    "erg_level", "pain_state", "sample_segment", "posture_risks", "point_risk",
    "path_risk", "risk_of_posture",
]
