"""Scaled 2-DOF sagittal-plane arm model.

Angles are in degrees. Shoulder flexion is measured from the arm hanging
straight down (positive = forward/up); elbow flexion from full extension,
bending in the same rotational sense. The human faces the robot, so reaching
forward *decreases* world x.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

SHOULDER_LIMITS = (-60.0, 180.0)
ELBOW_LIMITS = (0.0, 150.0)

STANCE_X = 2.72
SHOULDER_HEIGHT_RATIO = 0.823
OBJECT_LENGTH = 1.30

# slack on the reachable annulus so full extension does not flap
REACH_TOL = 1e-9
# slack on joint limits so FK -> IK of a limit posture stays valid
ANGLE_TOL = 1e-7


class Point2(NamedTuple):
    x: float
    z: float


class JointAngles(NamedTuple):
    shoulder: float
    elbow: float


@dataclass(frozen=True)
class BodyParams:
    height: float
    shoulder_span: float
    upper_arm_length: float
    forearm_length: float

    def __post_init__(self):
        for name in ("height", "shoulder_span", "upper_arm_length", "forearm_length"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"BodyParams.{name} must be a positive number, got {value!r}")
        if self.upper_arm_length + self.forearm_length >= self.height:
            raise ValueError("arm segments must be shorter than body height")


@dataclass(frozen=True)
class HumanModel:
    l_upper: float
    l_fore: float
    shoulder_anchor: Point2
    shoulder_limits: tuple[float, float] = field(default=SHOULDER_LIMITS)
    elbow_limits: tuple[float, float] = field(default=ELBOW_LIMITS)

    def __post_init__(self):
        if not (self.l_upper > 0 and self.l_fore > 0):
            raise ValueError("segment lengths must be positive")
        object.__setattr__(self, "shoulder_anchor", Point2(*map(float, self.shoulder_anchor)))

    @property
    def reach(self) -> float:
        return self.l_upper + self.l_fore

    def within_limits(self, q: JointAngles) -> bool:
        lo_s, hi_s = self.shoulder_limits
        lo_e, hi_e = self.elbow_limits
        t = ANGLE_TOL
        return lo_s - t <= q.shoulder <= hi_s + t and lo_e - t <= q.elbow <= hi_e + t


def default_anchor(body: BodyParams) -> Point2:
    return Point2(STANCE_X, SHOULDER_HEIGHT_RATIO * body.height)


def scale_model(body: BodyParams, anchor: Point2 | None = None) -> HumanModel:
    if not isinstance(body, BodyParams):
        raise TypeError("body must be a BodyParams")
    if anchor is None:
        anchor = default_anchor(body)
    return HumanModel(body.upper_arm_length, body.forearm_length, Point2(*anchor))


def forward_kinematics(model: HumanModel, q: JointAngles) -> Point2:
    s = math.radians(q.shoulder)
    se = math.radians(q.shoulder + q.elbow)
    reach = model.l_upper * math.sin(s) + model.l_fore * math.sin(se)
    drop = -model.l_upper * math.cos(s) - model.l_fore * math.cos(se)
    ax, az = model.shoulder_anchor
    return Point2(ax - reach, az + drop)


def inverse_kinematics(model: HumanModel, ee: Point2) -> list[JointAngles]:
    """All planar solutions reaching ``ee``; empty when unreachable.

    Two mirrored candidates strictly inside the reachable annulus, one on its
    boundary.
    """
    l1, l2 = model.l_upper, model.l_fore
    u = model.shoulder_anchor.x - ee[0]  # forward reach
    v = ee[1] - model.shoulder_anchor.z
    dist = math.hypot(u, v)
    if dist > l1 + l2 + REACH_TOL or dist < abs(l1 - l2) - REACH_TOL:
        return []
    c = (u * u + v * v - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    c = min(1.0, max(-1.0, c))
    base = math.atan2(u, -v)
    on_boundary = (abs(dist - (l1 + l2)) <= REACH_TOL
                   or abs(dist - abs(l1 - l2)) <= REACH_TOL)
    elbows = [math.acos(c)] if on_boundary else [math.acos(c), -math.acos(c)]
    out = []
    for e in elbows:
        s = base - math.atan2(l2 * math.sin(e), l1 + l2 * math.cos(e))
        out.append(JointAngles(_wrap_deg(math.degrees(s)), math.degrees(e)))
    return out


def _wrap_deg(a: float) -> float:
    # keep shoulder in (-180, 180]; round-off just above -180 maps to the 180 limit
    a = math.fmod(a + 180.0, 360.0)
    if a <= ANGLE_TOL:
        a += 360.0
    return a - 180.0


def select_solution(model: HumanModel, candidates: Sequence[JointAngles]) -> JointAngles | None:
    valid = [q for q in candidates if model.within_limits(q)]
    if not valid:
        return None
    return min(valid, key=lambda q: q.shoulder)


def solve_posture(model: HumanModel, ee: Point2) -> JointAngles | None:
    return select_solution(model, inverse_kinematics(model, ee))


def solve_postures(model: HumanModel, ee_x: np.ndarray, ee_z: np.ndarray):
    """Vectorised IK + selection over many end-effector points.

    Returns ``(shoulder, elbow, ok)`` arrays in degrees; ``ok`` marks points
    with a limit-respecting solution. Matches :func:`solve_posture` pointwise.
    """
    l1, l2 = model.l_upper, model.l_fore
    u = model.shoulder_anchor.x - np.asarray(ee_x, dtype=float)
    v = np.asarray(ee_z, dtype=float) - model.shoulder_anchor.z
    dist = np.hypot(u, v)
    reachable = (dist <= l1 + l2 + REACH_TOL) & (dist >= abs(l1 - l2) - REACH_TOL)
    c = np.clip((u * u + v * v - l1 * l1 - l2 * l2) / (2.0 * l1 * l2), -1.0, 1.0)
    base = np.arctan2(u, -v)
    e_abs = np.arccos(c)

    lo_s, hi_s = model.shoulder_limits
    lo_e, hi_e = model.elbow_limits
    best_s = np.full(u.shape, np.inf)
    best_e = np.full(u.shape, np.nan)
    for sign in (1.0, -1.0):
        e = sign * e_abs
        s = base - np.arctan2(l2 * np.sin(e), l1 + l2 * np.cos(e))
        s_deg = np.degrees(s)
        s_deg = np.mod(s_deg + 180.0, 360.0)
        s_deg = np.where(s_deg <= 0, s_deg + 360.0, s_deg) - 180.0
        e_deg = np.degrees(e)
        t = ANGLE_TOL
        ok = (reachable & (s_deg >= lo_s - t) & (s_deg <= hi_s + t)
              & (e_deg >= lo_e - t) & (e_deg <= hi_e + t))
        take = ok & (s_deg < best_s)
        best_s = np.where(take, s_deg, best_s)
        best_e = np.where(take, e_deg, best_e)
    ok = np.isfinite(best_s)
    return np.where(ok, best_s, np.nan), best_e, ok


def human_ee_from_object(obj: Point2, l_object: float = OBJECT_LENGTH) -> Point2:
    return Point2(obj[0] + l_object / 2.0, obj[1])


def robot_ee_from_object(obj: Point2, l_object: float = OBJECT_LENGTH) -> Point2:
    return Point2(obj[0] - l_object / 2.0, obj[1])
