"""Model-based reference policies by value iteration.

Used to calibrate the participant geometry and as an independent check on
what the learners should find. The grid variant is exact; the continuous
variant snaps positions to a lattice (``res`` metres) and is approximate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .environment import (DQN_ACTIONS, GRID_ACTIONS, GRID_ACTIONS_DIAGONAL, COL_STEP,
                          ROW_STEP, ParticipantPreset, Workspace, erg_rew, x_mov_rew,
                          z_step_rew)
from .risk import DEFAULT_SAMPLE_STEP, posture_risks

MAX_COUNT = 6


@dataclass
class PlanResult:
    steps: int
    avg_erg: float
    avg_pain: float
    ret: float
    path: list
    reached: bool


def _segment_risks(model, ws, x0, z0, dx, dz, sample_step):
    """Mean erg/pain and feasibility for straight moves from many starts."""
    length = float(np.hypot(dx, dz))
    n = max(1, int(np.ceil(length / sample_step - 1e-9)))
    t = np.linspace(0.0, 1.0, n + 1)
    xs = (x0[..., None] + t * dx) + ws.x_origin_world
    zs = (z0[..., None] + t * dz) + ws.z_origin_world
    erg, pain, ok = posture_risks(model, xs.ravel(), zs.ravel(), ws.l_object)
    shape = xs.shape
    erg = erg.reshape(shape)
    pain = pain.reshape(shape)
    ok = ok.reshape(shape)
    return erg.mean(-1), pain.mean(-1), ok.all(-1)


def _value_iteration(r, nxt, valid, terminal_next, gamma, iters=2000, tol=1e-9):
    """r, nxt, valid: arrays [S, A]; nxt indexes states; returns Q."""
    n_s = r.shape[0]
    v = np.zeros(n_s)
    q = np.full(r.shape, -np.inf)
    for _ in range(iters):
        boot = np.where(terminal_next, 0.0, v[nxt])
        q = np.where(valid, r + gamma * boot, -np.inf)
        v_new = q.max(1)
        v_new = np.where(np.isfinite(v_new), v_new, 0.0)
        if np.max(np.abs(v_new - v)) < tol:
            v = v_new
            break
        v = v_new
    return q


def plan_grid(preset: ParticipantPreset, ws: Workspace | None = None, gamma: float = 0.9,
              diagonal: bool = False, sample_step: float = DEFAULT_SAMPLE_STEP) -> PlanResult:
    ws = ws or Workspace()
    model = preset.model()
    actions = GRID_ACTIONS_DIAGONAL if diagonal else GRID_ACTIONS
    nc, nr = ws.n_cols, ws.n_rows
    target = preset.ql_target(ws)
    cols, rows = np.meshgrid(np.arange(nc), np.arange(nr), indexing="ij")
    cols, rows = cols.ravel(), rows.ravel()
    n_pos = cols.size
    n_s = n_pos * (MAX_COUNT + 1)
    r = np.zeros((n_s, len(actions)))
    nxt = np.zeros((n_s, len(actions)), dtype=int)
    valid = np.zeros((n_s, len(actions)), dtype=bool)
    term = np.zeros((n_s, len(actions)), dtype=bool)
    info = {}
    for ai, a in enumerate(actions):
        dc, dr = a.value
        nc_, nr_ = cols + dc, rows + dr
        inb = (nc_ >= 0) & (nc_ < nc) & (nr_ >= 0) & (nr_ < nr)
        erg, pain, ok = _segment_risks(model, ws, cols * COL_STEP, rows * ROW_STEP,
                                       dc * COL_STEP, dr * ROW_STEP, sample_step)
        npos = np.clip(nc_, 0, nc - 1) * nr + np.clip(nr_, 0, nr - 1)
        for c in range(MAX_COUNT + 1):
            cx = min(c + 1, MAX_COUNT) if a.horizontal else 0
            rew = np.where(pain > 0, -100.0, 0.15 * erg_rew(erg) + 0.05 * x_mov_rew(cx))
            sl = slice(c * n_pos, (c + 1) * n_pos)
            r[sl, ai] = rew
            nxt[sl, ai] = cx * n_pos + npos
            valid[sl, ai] = inb & ok & (rows < target)
            term[sl, ai] = nr_ >= target
        info[ai] = (erg, pain)
    q = _value_iteration(r, nxt, valid, term, gamma)
    s = preset.ql_initial[0] * nr + preset.ql_initial[1]
    path, ergs, pains, ret = [(int(cols[s]), int(rows[s]))], [], [], 0.0
    for _ in range(100):
        if not np.isfinite(q[s]).any():
            break
        ai = int(np.argmax(q[s]))
        pos = s % n_pos
        ergs.append(info[ai][0][pos])
        pains.append(info[ai][1][pos])
        ret += r[s, ai]
        done = term[s, ai]
        s = nxt[s, ai]
        path.append((int(cols[s % n_pos]), int(rows[s % n_pos])))
        if done:
            break
    reached = path[-1][1] >= target
    return PlanResult(len(ergs), float(np.mean(ergs)) if ergs else float("nan"),
                      float(np.mean(pains)) if pains else float("nan"), ret, path, reached)


def plan_continuous(preset: ParticipantPreset, ws: Workspace | None = None,
                    gamma: float = 0.999, res: float = 0.005,
                    sample_step: float = DEFAULT_SAMPLE_STEP) -> PlanResult:
    if res > 0.01 + 1e-12:
        # coarser lattices cannot represent the 0.03 m step and the planner stalls
        raise ValueError("res must be 0.01 m or finer")
    ws = ws or Workspace()
    model = preset.model()
    nx = int(round(ws.width / res)) + 1
    nz = int(round(ws.height / res)) + 1
    ix, iz = np.meshgrid(np.arange(nx), np.arange(nz), indexing="ij")
    ix, iz = ix.ravel(), iz.ravel()
    x0, z0 = ix * res, iz * res
    n_pos = ix.size
    ztarget = preset.dqn_target_z(ws)
    n_a = len(DQN_ACTIONS)
    n_s = n_pos * (MAX_COUNT + 1)
    r = np.zeros((n_s, n_a))
    nxt = np.zeros((n_s, n_a), dtype=int)
    valid = np.zeros((n_s, n_a), dtype=bool)
    term = np.zeros((n_s, n_a), dtype=bool)
    info = {}
    not_done = z0 < ztarget - 1e-9
    for ai, a in enumerate(DQN_ACTIONS):
        dx, dz = a.displacement
        x1, z1 = x0 + dx, z0 + dz
        inb = (x1 >= -1e-9) & (x1 <= ws.width + 1e-9) & (z1 >= -1e-9) & (z1 <= ws.height + 1e-9)
        erg, pain, ok = _segment_risks(model, ws, x0, z0, dx, dz, sample_step)
        jx = np.clip(np.rint(x1 / res).astype(int), 0, nx - 1)
        jz = np.clip(np.rint(z1 / res).astype(int), 0, nz - 1)
        npos = jx * nz + jz
        for c in range(MAX_COUNT + 1):
            cx = min(c + 1, MAX_COUNT) if a.horizontal else 0
            rew = np.where(pain > 0, -100.0, 0.15 * erg_rew(erg)
                           + 0.3 * z_step_rew(a.d, a.alpha) + 0.05 * x_mov_rew(cx))
            sl = slice(c * n_pos, (c + 1) * n_pos)
            r[sl, ai] = rew
            nxt[sl, ai] = cx * n_pos + npos
            valid[sl, ai] = inb & ok & not_done
            term[sl, ai] = z1 >= ztarget - 1e-9
        info[ai] = (erg, pain)
    q = _value_iteration(r, nxt, valid, term, gamma)
    start = preset.dqn_start(ws)
    s = int(round(start.x / res)) * nz + int(round(start.z / res))
    path, ergs, pains, ret = [(float(x0[s]), float(z0[s]))], [], [], 0.0
    for _ in range(100):
        if not np.isfinite(q[s]).any():
            break
        ai = int(np.argmax(q[s]))
        pos = s % n_pos
        ergs.append(info[ai][0][pos])
        pains.append(info[ai][1][pos])
        ret += r[s, ai]
        done = term[s, ai]
        s = nxt[s, ai]
        path.append((float(x0[s % n_pos]), float(z0[s % n_pos])))
        if done:
            break
    reached = path[-1][1] >= ztarget - 1e-9
    return PlanResult(len(ergs), float(np.mean(ergs)) if ergs else float("nan"),
                      float(np.mean(pains)) if pains else float("nan"), ret, path, reached)
