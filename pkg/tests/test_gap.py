import io
from dataclasses import replace

import numpy as np
import pytest

from ergocobot.gap import (ZERO_GAP, GapConfig, SensorPipeline, SurrogateObserver,
                           perturb_model, simulate_motion, tick_positions)
from ergocobot.kinematics import HumanModel, JointAngles, Point2, forward_kinematics
from ergocobot.risk import path_risk

MODEL = HumanModel(0.35, 0.29, Point2(2.35, 1.1))


def _obj(q):
    ee = forward_kinematics(MODEL, JointAngles(*q))
    return Point2(ee.x - 0.65, ee.z)


A = _obj((10, 80))
B = Point2(A.x, A.z + 0.2)


def test_config_validation():
    with pytest.raises(ValueError):
        GapConfig(sensor_rate=0)
    with pytest.raises(ValueError):
        GapConfig(segment_length_error=0.5)
    with pytest.raises(ValueError):
        GapConfig(angle_noise_sigma=-1)


def test_perturbation_bounded_and_seeded():
    cfg = GapConfig()
    m1, m2 = perturb_model(MODEL, cfg, 3), perturb_model(MODEL, cfg, 3)
    assert m1 == m2
    assert abs(m1.l_upper / MODEL.l_upper - 1) <= 0.03
    assert abs(m1.l_fore / MODEL.l_fore - 1) <= 0.03
    assert m1.shoulder_anchor == MODEL.shoulder_anchor
    assert perturb_model(MODEL, ZERO_GAP, 3) == MODEL


def test_sensor_bias_sign_and_clock():
    p = SensorPipeline(GapConfig(angle_noise_sigma=0.0), seed=1)
    assert set(np.abs(p.bias)) == {2.0}
    ts, s, e = p.read(np.zeros(3), np.full(3, 90.0))
    assert np.allclose(ts, [0, 1 / 60, 2 / 60])
    assert np.allclose(s, p.bias[0]) and np.allclose(e, 90 + p.bias[1])
    ts2, *_ = p.read(np.zeros(2), np.zeros(2))
    assert ts2[0] == pytest.approx(3 / 60)


def test_tick_count_follows_speed():
    xs, zs, dist = tick_positions(A, B, GapConfig())
    assert dist == pytest.approx(0.2)
    # 4 s of travel sampled at 60 Hz, both ends included
    assert len(xs) == 241
    assert zs[-1] == pytest.approx(B.z)


def test_zero_gap_matches_nominal():
    pipe = SensorPipeline(ZERO_GAP, 0)
    risk, elapsed, samples = simulate_motion(MODEL, pipe, A, B, ZERO_GAP)
    nominal = path_risk(MODEL, A, B, 0.001)
    assert risk.avg_erg == pytest.approx(nominal.avg_erg, abs=0.02)
    assert elapsed == pytest.approx(0.2 / 0.05 + 1.0)
    assert samples.dtype.names == ("timestamp", "shoulder", "elbow", "erg", "pain")


def test_observer_dump_and_determinism():
    buf1, buf2 = io.StringIO(), io.StringIO()
    o1 = SurrogateObserver(MODEL, GapConfig(), 7, buf1)
    o2 = SurrogateObserver(MODEL, GapConfig(), 7, buf2)
    m1 = o1.motion(MODEL, A, B, 1.3)
    m2 = o2.motion(MODEL, A, B, 1.3)
    assert m1 == m2
    assert buf1.getvalue() == buf2.getvalue()
    lines = buf1.getvalue().splitlines()
    assert lines[0] == "timestamp,shoulder,elbow,erg,pain"
    assert len(lines) == 1 + 241


def test_unfollowable_path_counts_as_pain():
    far = Point2(0.2, 0.2)
    m = SurrogateObserver(MODEL, GapConfig(), 0).motion(MODEL, far, Point2(0.2, 0.3), 1.3)
    assert m.pain_seen and m.risk.avg_pain == 1.0


def test_noise_changes_with_seed():
    m1 = SurrogateObserver(MODEL, GapConfig(), 1).motion(MODEL, A, B, 1.3)
    m2 = SurrogateObserver(MODEL, replace(GapConfig(), angle_noise_sigma=5.0), 2).motion(
        MODEL, A, B, 1.3)
    assert m1.risk != m2.risk or m1.pain_seen != m2.pain_seen
