import io
import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ergocobot.environment import (DQN_ACTIONS, GRID_ACTIONS, GRID_ACTIONS_DIAGONAL,
                                   ConfigurationError, ContractViolation, DqnAction, EnvState,
                                   GridAction, TransportEnv, Workspace, erg_rew, get_preset,
                                   is_terminal, load_presets, reward_dqn, reward_ql,
                                   shaped_actions, x_mov_rew, z_step_rew)
from ergocobot.kinematics import BodyParams, HumanModel, Point2, solve_postures
from ergocobot.risk import RiskSummary, sample_segment

ROOMY_BODY = BodyParams(2.5, 0.4, 1.0, 1.0)


def roomy_preset():
    return replace(get_preset("1.79"), body=ROOMY_BODY, anchor=Point2(2.85, 0.95))


# ----------------------------------------------------------------- rewards --

def test_erg_rew_examples():
    assert erg_rew(1.0) == 0
    assert erg_rew(3.0) == -100
    assert erg_rew(2.0) == -50


def test_x_mov_rew_examples():
    assert x_mov_rew(0) == 0
    assert x_mov_rew(3) == -60
    assert x_mov_rew(5) == -100
    assert x_mov_rew(6) == -100


def test_z_step_rew_examples():
    assert z_step_rew(0.4, 90.0) == 100
    assert z_step_rew(0.02, 0.0) == 0
    assert z_step_rew(0.2, 30.0) == pytest.approx(25)
    assert z_step_rew(0.4, 180.0) == 0


def test_reward_dqn_examples():
    assert reward_dqn(RiskSummary(2.0, 1.0), DqnAction(90.0, 0.4), 0) == -100
    assert reward_dqn(RiskSummary(2.0, 0.0), DqnAction(90.0, 0.4), 0) == pytest.approx(22.5)
    assert reward_dqn(RiskSummary(1.0, 0.0), DqnAction(0.0, 0.02), 1) == pytest.approx(-1.0)
    # any pain on the path triggers the penalty
    assert reward_dqn(RiskSummary(1.0, 0.01), DqnAction(90.0, 0.4), 0) == -100


def test_reward_ql_examples():
    assert sum(reward_ql(RiskSummary(2.0, 0.0), 0) for _ in range(9)) == pytest.approx(-67.5)
    assert sum(reward_ql(RiskSummary(2.12, 0.0), 0) for _ in range(8)) == pytest.approx(-67.2)
    assert reward_ql(RiskSummary(1.5, 0.5), 0) == -100


@given(st.floats(1, 4), st.floats(0, 1), st.sampled_from(DQN_ACTIONS), st.integers(0, 20))
def test_reward_ranges(erg, pain, action, cx):
    r = reward_dqn(RiskSummary(erg, pain), action, cx)
    assert -100 - 1e-9 <= r <= 30 + 1e-9 or erg > 3
    q = reward_ql(RiskSummary(erg, pain), cx)
    assert q <= 0


# ----------------------------------------------------------------- actions --

def test_action_set_shape():
    assert len(DQN_ACTIONS) == 35
    assert [a.index for a in DQN_ACTIONS] == list(range(35))
    for a in DQN_ACTIONS:
        assert a.displacement[1] >= 0
    for g in GRID_ACTIONS_DIAGONAL:
        assert g.value[1] >= 0
    assert GRID_ACTIONS == (GridAction.UP, GridAction.LEFT, GridAction.RIGHT)


def test_world_local_inverse(ws):
    p = Point2(0.123, 0.456)
    assert ws.to_local(ws.to_world(p)) == pytest.approx(p)
    assert ws.to_world(p).x == pytest.approx(p.x + 1.0)


def test_grid_dimensions(ws):
    assert (ws.n_cols, ws.n_rows) == (7, 10)
    assert ws.cell_position((4, 1)) == pytest.approx((0.26, 0.1))


def test_shaped_top_edge_blocks_upward(ws, roomy_model):
    state = EnvState(Point2(0.2, 0.9), 0)
    shaped = shaped_actions(state, roomy_model, ws)
    assert shaped
    assert all(DQN_ACTIONS[i].displacement[1] <= 1e-12 for i in shaped)


def test_shaped_interior_is_bound_filter(ws, roomy_model):
    state = EnvState(Point2(0.2, 0.45), 0)
    shaped = shaped_actions(state, roomy_model, ws)
    in_bounds = [a.index for a in DQN_ACTIONS
                 if ws.contains((0.2 + a.displacement[0], 0.45 + a.displacement[1]))]
    assert list(shaped) == in_bounds


def test_shaped_excludes_out_of_reach(ws):
    # grip reach ends 0.25 m in front of the right edge: a 0.4 m forward move is impossible
    w = ws.to_world(Point2(0.4, 0.45))
    model = HumanModel(0.3, 0.3, Point2(w.x + ws.l_object / 2 + 0.35, w.z))
    shaped = shaped_actions(EnvState(Point2(0.4, 0.45), 0), model, ws)
    forward = DqnAction(180.0, 0.4).index
    assert forward not in shaped
    assert DqnAction(180.0, 0.02).index in shaped


def test_step_examples():
    env = TransportEnv(roomy_preset(), "dqn")
    env.reset()
    env.state = EnvState(Point2(0.2, 0.40), 0)
    out = env.step(DqnAction(90.0, 0.2).index)
    assert out.next.obj[1] == pytest.approx(0.60)
    assert out.distance == pytest.approx(0.2)

    env.state = EnvState(Point2(0.2, 0.40), 0)
    a = env.step(DqnAction(0.0, 0.02).index)
    b = env.step(DqnAction(0.0, 0.02).index)
    assert (a.next.count_x, b.next.count_x) == (1, 2)
    assert x_mov_rew(a.next.count_x) == -20 and x_mov_rew(b.next.count_x) == -40
    c = env.step(DqnAction(30.0, 0.02).index)
    assert c.next.count_x == 0


def test_ql_step_up():
    env = TransportEnv(roomy_preset(), "ql")
    env.reset()
    env.state = EnvState((3, 3), 0)
    out = env.step(env.actions.index(GridAction.UP))
    assert out.next.obj == (3, 4)


def test_step_rejects_unshaped_action(ws):
    env = TransportEnv(roomy_preset(), "dqn")
    env.reset()
    env.state = EnvState(Point2(0.2, 0.9), 0)
    with pytest.raises(ContractViolation):
        env.step(DqnAction(90.0, 0.4).index)


def test_terminal_examples(ws):
    p169 = get_preset("1.69")
    p179 = get_preset("1.79")
    assert is_terminal(EnvState(Point2(0.1, 0.76), 0), p169, ws)[0]
    assert not is_terminal(EnvState(Point2(0.1, 0.86), 0), p179, ws)[0]
    assert is_terminal(EnvState(Point2(0.1, 0.5), 0), p179, ws, shaped=()) == (
        True, "empty_shaped_set")
    assert is_terminal(EnvState((2, 9), 0), p179, ws, "ql") == (True, "target")


def test_presets_table():
    presets = {p.id: p for p in load_presets()}
    assert set(presets) == {"1.62", "1.69", "1.79", "1.83"}
    assert presets["1.79"].dqn_initial == (1.3, 0.434)
    assert presets["1.83"].ql_initial == (5, 2)
    assert presets["1.79"].ql_target(Workspace()) == 9
    assert presets["1.69"].dqn_delta_z == 0.15


def test_unknown_preset():
    with pytest.raises(ConfigurationError):
        get_preset("2.00")


def test_preset_self_check_rejects_unreachable():
    bad = replace(get_preset("1.79"), anchor=Point2(5.0, 1.0))
    from ergocobot.environment import check_preset
    with pytest.raises(ConfigurationError):
        check_preset(bad, Workspace())


def test_step_log_records():
    buf = io.StringIO()
    env = TransportEnv(get_preset("1.79"), "dqn", log=buf)
    env.reset()
    env.step(env.shaped()[0])
    rec = json.loads(buf.getvalue().splitlines()[0])
    assert {"episode", "step", "state", "action", "reward", "risk", "done_reason"} <= set(rec)


def test_shaped_actions_are_feasible_fuzz(ws):
    """Executed shaped actions stay in bounds with every path sample reachable."""
    rng = np.random.default_rng(11)
    for pid in ("1.62", "1.79"):
        preset = get_preset(pid)
        model = preset.model()
        for _ in range(150):
            obj = Point2(rng.uniform(0, ws.width), rng.uniform(0, ws.height))
            for i in shaped_actions(EnvState(obj, 0), model, ws):
                dx, dz = DQN_ACTIONS[i].displacement
                tgt = Point2(obj.x + dx, obj.z + dz)
                assert ws.contains(tgt)
                xs, zs = sample_segment(ws.to_world(obj), ws.to_world(tgt), 0.01)
                _, _, ok = solve_postures(model, xs + ws.l_object / 2, zs)
                assert ok.all()


def test_episode_reaches_target_or_stops():
    env = TransportEnv(get_preset("1.79"), "ql")
    rng = np.random.default_rng(0)
    env.reset()
    for _ in range(200):
        shaped = env.shaped()
        out = env.step(int(rng.choice(shaped)))
        if out.done:
            break
    assert out.done and out.done_reason in ("target", "empty_shaped_set", "step_limit")
