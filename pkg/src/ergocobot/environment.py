"""Collaborative vertical-transport MDP.

Two flavours share one geometry: a continuous-state variant driven by
(direction, distance) actions for DQN, and a grid variant for tabular
Q-Learning. Positions inside an episode are workspace-local; the human model
lives in the world frame (x = distance from the robot base).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, NamedTuple, Sequence

import numpy as np

from .kinematics import (BodyParams, HumanModel, Point2, scale_model,
                         solve_postures, OBJECT_LENGTH)
from .nnet import normalize_state
from .risk import (DEFAULT_SAMPLE_STEP, InfeasiblePathError, RiskSummary,
                   path_risk, sample_segment)

ALPHAS = (0.0, 30.0, 60.0, 90.0, 120.0, 150.0, 180.0)
DISTANCES = (0.02, 0.03, 0.05, 0.2, 0.4)

COL_STEP = 0.065
ROW_STEP = 0.10

STEP_LIMIT = 100
BOUND_TOL = 1e-9

DONE_REASONS = ("target", "empty_shaped_set", "pain_abort", "step_limit")


class ConfigurationError(ValueError):
    pass


class ContractViolation(RuntimeError):
    pass


# ---------------------------------------------------------------- geometry --

@dataclass(frozen=True)
class Workspace:
    width: float = 0.40
    height: float = 0.90
    x_origin_world: float = 1.0
    # places the Table I DQN starts (world z) at the QL start rows
    z_origin_world: float = 0.334
    l_object: float = OBJECT_LENGTH

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0 and self.l_object > 0):
            raise ConfigurationError("workspace width, height and object length must be positive")

    @property
    def n_cols(self) -> int:
        return int(math.floor(self.width / COL_STEP + 1e-9)) + 1

    @property
    def n_rows(self) -> int:
        return int(math.floor(self.height / ROW_STEP + 1e-9)) + 1

    def to_world(self, p) -> Point2:
        return Point2(p[0] + self.x_origin_world, p[1] + self.z_origin_world)

    def to_local(self, p) -> Point2:
        return Point2(p[0] - self.x_origin_world, p[1] - self.z_origin_world)

    def contains(self, p) -> bool:
        return (-BOUND_TOL <= p[0] <= self.width + BOUND_TOL
                and -BOUND_TOL <= p[1] <= self.height + BOUND_TOL)

    def cell_position(self, cell) -> Point2:
        col, row = cell
        return Point2(col * COL_STEP, row * ROW_STEP)

    def contains_cell(self, cell) -> bool:
        col, row = cell
        return 0 <= col < self.n_cols and 0 <= row < self.n_rows


# ----------------------------------------------------------------- actions --

class DqnAction(NamedTuple):
    alpha: float
    d: float

    @property
    def index(self) -> int:
        return ALPHAS.index(self.alpha) * len(DISTANCES) + DISTANCES.index(self.d)

    @property
    def displacement(self) -> tuple[float, float]:
        a = math.radians(self.alpha)
        dx = self.d * math.cos(a)
        dz = self.d * math.sin(a)
        # exact zeros for the axis-aligned directions
        if self.alpha == 90.0:
            dx = 0.0
        if self.alpha in (0.0, 180.0):
            dz = 0.0
        return dx, dz

    @property
    def horizontal(self) -> bool:
        return self.alpha in (0.0, 180.0)


DQN_ACTIONS: tuple[DqnAction, ...] = tuple(DqnAction(a, d) for a in ALPHAS for d in DISTANCES)
N_DQN_ACTIONS = len(DQN_ACTIONS)


class GridAction(Enum):
    UP = (0, 1)
    LEFT = (-1, 0)
    RIGHT = (1, 0)
    UP_LEFT = (-1, 1)
    UP_RIGHT = (1, 1)

    @property
    def horizontal(self) -> bool:
        return self.value[1] == 0


GRID_ACTIONS = (GridAction.UP, GridAction.LEFT, GridAction.RIGHT)
GRID_ACTIONS_DIAGONAL = GRID_ACTIONS + (GridAction.UP_LEFT, GridAction.UP_RIGHT)


class EnvState(NamedTuple):
    obj: tuple  # Point2 (local, metres) or (col, row)
    count_x: int = 0


class StepOutcome(NamedTuple):
    next: EnvState
    reward: float
    done: bool
    done_reason: str | None
    risk: RiskSummary
    distance: float = 0.0
    elapsed: float = 0.0
    shaped_next: tuple[int, ...] = ()


# ----------------------------------------------------------------- rewards --

def erg_rew(avg_erg: float) -> float:
    return -50.0 * avg_erg + 50.0


def x_mov_rew(count_x: int) -> float:
    return -20.0 * count_x if count_x <= 5 else -100.0


def z_step_rew(d: float, alpha: float) -> float:
    if alpha in (0.0, 180.0):
        return 0.0
    return d * math.sin(math.radians(alpha)) * 100.0 / 0.4


def pain_triggered(risk: RiskSummary) -> bool:
    # any pain sample on the path counts; path averages are rarely exactly 1
    return risk.avg_pain > 0


def reward_dqn(risk: RiskSummary, action: DqnAction, count_x: int) -> float:
    if pain_triggered(risk):
        return -100.0
    return (0.15 * erg_rew(risk.avg_erg) + 0.3 * z_step_rew(action.d, action.alpha)
            + 0.05 * x_mov_rew(count_x))


def reward_ql(risk: RiskSummary, count_x: int) -> float:
    if pain_triggered(risk):
        return -100.0
    return 0.15 * erg_rew(risk.avg_erg) + 0.05 * x_mov_rew(count_x)


# ----------------------------------------------------------------- presets --

@dataclass(frozen=True)
class ParticipantPreset:
    """Per-participant start/end conditions and body scaling.

    ``dqn_initial`` is in the world frame (distance from the robot base,
    height above the floor).
    """
    id: str
    body: BodyParams
    ql_initial: tuple[int, int]
    dqn_initial: Point2
    ql_target_row: int
    dqn_delta_z: float
    anchor: Point2 | None = None

    def model(self) -> HumanModel:
        return scale_model(self.body, self.anchor)

    def dqn_start(self, ws: Workspace) -> Point2:
        return ws.to_local(self.dqn_initial)

    def ql_target(self, ws: Workspace) -> int:
        return min(self.ql_target_row, ws.n_rows - 1)

    def dqn_target_z(self, ws: Workspace) -> float:
        return ws.height - self.dqn_delta_z


def _body(height: float) -> BodyParams:
    # segment ratios of stature, grip point at the end of the forearm segment
    return BodyParams(height, round(0.237 * height, 2), round(0.195 * height, 2),
                      round(0.16 * height, 2))


# Shoulder anchors are calibrated so each participant's start posture is
# reachable and pain free; see README "Geometry".
_PRESET_ROWS = (
    # id,    ql_init, dqn_init,        ql_tgt, dz,   anchor
    ("1.62", (4, 1), (1.30, 0.434), 9, 0.20, None),
    ("1.69", (4, 1), (1.35, 0.454), 9, 0.15, None),
    ("1.79", (4, 1), (1.30, 0.434), 10, 0.03, None),
    ("1.83", (5, 2), (1.35, 0.474), 10, 0.03, None),
)

PRESET_ANCHORS: dict[str, Point2] = {
    "1.62": Point2(2.2875, 0.8465),
    "1.69": Point2(2.20, 0.884),
    "1.79": Point2(2.30, 0.909),
    "1.83": Point2(2.3625, 0.984),
}


def load_presets(ws: Workspace | None = None, check: bool = True) -> list[ParticipantPreset]:
    ws = ws or Workspace()
    presets = []
    for pid, ql0, dqn0, ql_t, dz, anchor in _PRESET_ROWS:
        body = _body(float(pid))
        anchor = PRESET_ANCHORS.get(pid, anchor)
        p = ParticipantPreset(pid, body, ql0, Point2(*dqn0), ql_t, dz, anchor)
        if check:
            check_preset(p, ws)
        presets.append(p)
    return presets


def get_preset(pid: str, ws: Workspace | None = None) -> ParticipantPreset:
    for p in load_presets(ws):
        if p.id == pid:
            return p
    raise ConfigurationError(f"unknown participant preset {pid!r}")


def check_preset(p: ParticipantPreset, ws: Workspace) -> None:
    """Startup self-check: both start postures must admit a valid IK solution."""
    start = p.dqn_start(ws)
    if not ws.contains(start):
        raise ConfigurationError(f"preset {p.id}: DQN start {start} outside workspace")
    if not (0 < p.dqn_delta_z < ws.height):
        raise ConfigurationError(f"preset {p.id}: delta z out of range")
    if not ws.contains_cell(p.ql_initial):
        raise ConfigurationError(f"preset {p.id}: QL start {p.ql_initial} outside grid")
    model = p.model()
    for local in (start, ws.cell_position(p.ql_initial)):
        w = ws.to_world(local)
        _, _, ok = solve_postures(model, np.array([w.x + ws.l_object / 2]), np.array([w.z]))
        if not ok[0]:
            raise ConfigurationError(
                f"preset {p.id}: start posture at {local} has no valid IK solution")


# ------------------------------------------------------------- transitions --

class Motion(NamedTuple):
    risk: RiskSummary
    elapsed: float
    pain_seen: bool


@dataclass
class SimObserver:
    """Risk source for the simulated environment: IK on the nominal model."""
    sample_step: float = DEFAULT_SAMPLE_STEP
    ee_speed: float = 0.05
    per_step_overhead: float = 1.0
    real: bool = field(default=False, init=False)

    def motion(self, model: HumanModel, a_world: Point2, b_world: Point2,
               l_object: float) -> Motion:
        risk = path_risk(model, a_world, b_world, self.sample_step, l_object)
        dist = math.hypot(b_world[0] - a_world[0], b_world[1] - a_world[1])
        return Motion(risk, dist / self.ee_speed + self.per_step_overhead, risk.avg_pain > 0)


def _action_list(kind: str, diagonal: bool):
    if kind == "dqn":
        return DQN_ACTIONS
    return GRID_ACTIONS_DIAGONAL if diagonal else GRID_ACTIONS


def action_target(kind: str, state: EnvState, action) -> tuple:
    if kind == "dqn":
        dx, dz = action.displacement
        return Point2(state.obj[0] + dx, state.obj[1] + dz)
    dc, dr = action.value
    return (state.obj[0] + dc, state.obj[1] + dr)


def local_position(kind: str, obj, ws: Workspace) -> Point2:
    return Point2(*obj) if kind == "dqn" else ws.cell_position(obj)


def shaped_actions(state: EnvState, model: HumanModel, ws: Workspace, kind: str = "dqn",
                   sample_step: float = DEFAULT_SAMPLE_STEP,
                   diagonal: bool = False) -> tuple[int, ...]:
    """Indices of actions that stay in bounds and keep every path posture feasible."""
    actions = _action_list(kind, diagonal)
    here = local_position(kind, state.obj, ws)
    segs = []
    keep = []
    for i, a in enumerate(actions):
        tgt = action_target(kind, state, a)
        if kind == "dqn":
            if not ws.contains(tgt):
                continue
        elif not ws.contains_cell(tgt):
            continue
        xs, zs = sample_segment(ws.to_world(here), ws.to_world(local_position(kind, tgt, ws)),
                                sample_step)
        segs.append((xs, zs))
        keep.append(i)
    if not keep:
        return ()
    lens = [len(s[0]) for s in segs]
    xs = np.concatenate([s[0] for s in segs]) + ws.l_object / 2.0
    zs = np.concatenate([s[1] for s in segs])
    _, _, ok = solve_postures(model, xs, zs)
    out = []
    pos = 0
    for i, n in zip(keep, lens):
        if ok[pos:pos + n].all():
            out.append(i)
        pos += n
    return tuple(out)


def is_terminal(state: EnvState, preset: ParticipantPreset, ws: Workspace,
                kind: str = "dqn", shaped: Sequence[int] | None = None,
                pain_abort: bool = False, steps: int = 0,
                step_limit: int = STEP_LIMIT) -> tuple[bool, str | None]:
    if pain_abort:
        return True, "pain_abort"
    if kind == "dqn":
        if state.obj[1] >= preset.dqn_target_z(ws) - BOUND_TOL:
            return True, "target"
    elif state.obj[1] >= preset.ql_target(ws):
        return True, "target"
    if shaped is not None and len(shaped) == 0:
        return True, "empty_shaped_set"
    if steps >= step_limit:
        return True, "step_limit"
    return False, None


class TransportEnv:
    """One participant, one algorithm flavour, one risk source.

    ``observer`` decides how risks are measured: :class:`SimObserver` runs IK
    on the nominal model; the surrogate real observer in :mod:`ergocobot.gap`
    corrupts a perturbed model's postures and aborts on pain.
    """

    def __init__(self, preset: ParticipantPreset, kind: str = "dqn",
                 ws: Workspace | None = None, observer=None,
                 step_limit: int = STEP_LIMIT, sample_step: float = DEFAULT_SAMPLE_STEP,
                 diagonal: bool = False, log: IO[str] | None = None):
        if kind not in ("dqn", "ql"):
            raise ValueError(f"kind must be 'dqn' or 'ql', got {kind!r}")
        self.preset = preset
        self.kind = kind
        self.ws = ws or Workspace()
        self.model = preset.model()
        self.observer = observer or SimObserver(sample_step=sample_step)
        self.step_limit = step_limit
        self.sample_step = sample_step
        self.diagonal = diagonal
        self.actions = _action_list(kind, diagonal)
        self.log = log
        self._shaped_cache: dict = {}
        self._risk_cache: dict = {}
        self.episode = 0
        self.state: EnvState | None = None
        self.steps = 0

    @property
    def real(self) -> bool:
        return bool(getattr(self.observer, "real", False))

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def initial_state(self) -> EnvState:
        if self.kind == "dqn":
            return EnvState(self.preset.dqn_start(self.ws), 0)
        return EnvState(tuple(self.preset.ql_initial), 0)

    def reset(self) -> EnvState:
        self.state = self.initial_state()
        self.steps = 0
        self.episode += 1
        return self.state

    def _key(self, obj):
        if self.kind == "dqn":
            return (round(obj[0], 9), round(obj[1], 9))
        return tuple(obj)

    def shaped(self, state: EnvState | None = None) -> tuple[int, ...]:
        state = state or self.state
        key = self._key(state.obj)
        out = self._shaped_cache.get(key)
        if out is None:
            out = shaped_actions(state, self.model, self.ws, self.kind,
                                 self.sample_step, self.diagonal)
            self._shaped_cache[key] = out
        return out

    def shaped_mask(self, state: EnvState | None = None) -> np.ndarray:
        mask = np.zeros(self.n_actions, dtype=bool)
        mask[list(self.shaped(state))] = True
        return mask

    def features(self, state: EnvState | None = None) -> np.ndarray:
        state = state or self.state
        pos = local_position(self.kind, state.obj, self.ws)
        return normalize_state(pos, self.ws)

    def step(self, action_index: int) -> StepOutcome:
        state = self.state
        if state is None:
            raise ContractViolation("step() before reset()")
        shaped = self.shaped(state)
        if action_index not in shaped:
            raise ContractViolation(f"action {action_index} not in shaped set {shaped}")
        action = self.actions[action_index]
        target = action_target(self.kind, state, action)
        if self.kind == "dqn":
            target = Point2(round(target[0], 12), round(target[1], 12))
        a_w = self.ws.to_world(local_position(self.kind, state.obj, self.ws))
        b_w = self.ws.to_world(local_position(self.kind, target, self.ws))

        if self.real:
            motion = self.observer.motion(self.model, a_w, b_w, self.ws.l_object)
        else:
            key = (self._key(state.obj), action_index)
            motion = self._risk_cache.get(key)
            if motion is None:
                motion = self.observer.motion(self.model, a_w, b_w, self.ws.l_object)
                self._risk_cache[key] = motion

        count_x = state.count_x + 1 if action.horizontal else 0
        if self.kind == "dqn":
            reward = reward_dqn(motion.risk, action, count_x)
        else:
            reward = reward_ql(motion.risk, count_x)
        nxt = EnvState(target, count_x)
        self.steps += 1
        abort = self.real and motion.pain_seen
        shaped_next = () if abort else self.shaped(nxt)
        done, reason = is_terminal(nxt, self.preset, self.ws, self.kind, shaped_next,
                                   pain_abort=abort, steps=self.steps,
                                   step_limit=self.step_limit)
        if abort:
            reward = -100.0
        distance = math.hypot(b_w[0] - a_w[0], b_w[1] - a_w[1])
        self.state = nxt
        out = StepOutcome(nxt, float(reward), done, reason, motion.risk, distance,
                          motion.elapsed, shaped_next)
        if self.log is not None:
            self._write_log(state, action_index, out)
        return out

    def _write_log(self, state: EnvState, action_index: int, out: StepOutcome) -> None:
        rec = {
            "episode": self.episode,
            "step": self.steps,
            "state": [float(v) for v in state.obj] + [state.count_x],
            "action": action_index,
            "reward": out.reward,
            "risk": {"avg_erg": out.risk.avg_erg, "avg_pain": out.risk.avg_pain},
            "done_reason": out.done_reason,
        }
        self.log.write(json.dumps(rec) + "\n")

