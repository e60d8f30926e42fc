import numpy as np
import pytest
from hypothesis import given, strategies as st

from ergocobot.environment import Workspace
from ergocobot.kinematics import Point2
from ergocobot.nnet import (Adam, Mlp, backward, forward, load_checkpoint, normalize_state,
                            optimize_step, save_checkpoint, soft_update)


def test_shapes():
    net = Mlp(2, 16, 35, seed=0)
    assert net.forward(np.zeros(2)).shape == (35,)
    assert net.forward(np.zeros((5, 2))).shape == (5, 35)
    assert forward(net, np.ones(2)).shape == (35,)


def test_normalize_state_corners():
    ws = Workspace()
    assert normalize_state(Point2(0, 0), ws) == pytest.approx([-1, -1])
    assert normalize_state(Point2(0.4, 0.9), ws) == pytest.approx([1, 1])
    assert normalize_state(Point2(0.2, 0.45), ws) == pytest.approx([0, 0])


def _loss(net, x, w):
    return float(np.sum(net.forward(x) * w))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    net = Mlp(2, 8, 5, seed=1)
    x = rng.uniform(-1, 1, size=(6, 2))
    w = rng.normal(size=(6, 5))
    grads = backward(net, x, w)
    h = 1e-6
    for name in ("w1", "b1", "w2", "b2"):
        p = getattr(net, name)
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = _loss(net, x, w)
            p[idx] = old - h
            down = _loss(net, x, w)
            p[idx] = old
            num[idx] = (up - down) / (2 * h)
        rel = np.abs(num - grads[name]) / np.maximum(1e-8, np.abs(num) + np.abs(grads[name]))
        assert rel.max() < 1e-6, name


def test_adam_first_step_moves_by_lr():
    net = Mlp(2, 4, 3, seed=0)
    before = net.w2.copy()
    g = {k: np.ones_like(v) for k, v in net.params().items()}
    optimize_step(net, g, Adam(1e-3))
    assert np.allclose(before - net.w2, 1e-3, atol=1e-9)


def test_adam_rejects_shape_mismatch():
    net = Mlp(2, 4, 3)
    with pytest.raises(ValueError):
        Adam().step(net, {"w1": np.ones((3, 3))})


def test_adam_reduces_regression_loss():
    rng = np.random.default_rng(0)
    net = Mlp(2, 32, 1, seed=0)
    x = rng.uniform(-1, 1, size=(64, 2))
    y = (x[:, :1] ** 2 + 0.5 * x[:, 1:])
    opt = Adam(1e-2)
    first = None
    for _ in range(300):
        out, cached = net.forward(x, cache=True)
        err = out - y
        loss = float(np.mean(err ** 2))
        first = loss if first is None else first
        opt.step(net, net.backward(cached, 2 * err / len(x)))
    assert loss < 0.2 * first


@given(st.floats(0.0, 1.0))
def test_soft_update_contraction(tau):
    a, b = Mlp(2, 8, 3, seed=1), Mlp(2, 8, 3, seed=2)
    before = sum(np.abs(a.params()[k] - b.params()[k]).sum() for k in a.params())
    soft_update(a, b, tau)
    after = sum(np.abs(a.params()[k] - b.params()[k]).sum() for k in a.params())
    assert after == pytest.approx((1 - tau) * before, rel=1e-9, abs=1e-12)


def test_soft_update_endpoints():
    a, b = Mlp(2, 8, 3, seed=1), Mlp(2, 8, 3, seed=2)
    w = a.w1.copy()
    soft_update(a, b, 0.0)
    assert np.array_equal(a.w1, w)
    soft_update(a, b, 1.0)
    assert np.allclose(a.w1, b.w1)


def test_soft_update_architecture_mismatch():
    with pytest.raises(ValueError):
        soft_update(Mlp(2, 8, 3), Mlp(2, 16, 3), 0.1)


def test_checkpoint_round_trip(tmp_path):
    net = Mlp(2, 16, 35, seed=5)
    path = save_checkpoint(tmp_path / "net.npz", net, {"note": "x"})
    loaded, meta = load_checkpoint(path)
    assert meta == {"note": "x"}
    assert loaded.dims == net.dims
    x = np.array([0.1, -0.3])
    assert np.array_equal(loaded.forward(x), net.forward(x))


def test_checkpoint_corrupt(tmp_path):
    p = tmp_path / "bad.npz"
    p.write_bytes(b"not a checkpoint")
    with pytest.raises(Exception):
        load_checkpoint(p)


def test_seeded_init_is_deterministic():
    assert np.array_equal(Mlp(2, 8, 3, seed=4).w1, Mlp(2, 8, 3, seed=4).w1)
    assert not np.array_equal(Mlp(2, 8, 3, seed=4).w1, Mlp(2, 8, 3, seed=5).w1)
