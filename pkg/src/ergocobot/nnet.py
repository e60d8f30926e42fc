"""Two-layer fully connected Q-network in plain numpy.

Topology is fixed: input -> linear -> ReLU -> linear. The output layer is
left linear so Q-values can go negative.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PARAM_NAMES = ("w1", "b1", "w2", "b2")
CHECKPOINT_VERSION = 1


def normalize_state(pos, ws) -> np.ndarray:
    """Affine map of a workspace-local position onto [-1, 1]^2."""
    return np.array([2.0 * pos[0] / ws.width - 1.0, 2.0 * pos[1] / ws.height - 1.0])


class Mlp:
    def __init__(self, input_dim: int = 2, hidden_dim: int = 512, output_dim: int = 35,
                 seed: int | None = 0, init: bool = True):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.output_dim = output_dim
        self.seed = seed
        if init:
            rng = np.random.default_rng(seed)
            lim1 = np.sqrt(6.0 / input_dim)  # He-uniform
            self.w1 = rng.uniform(-lim1, lim1, size=(input_dim, hidden_dim))
            self.b1 = np.zeros(hidden_dim)
            self.w2 = rng.uniform(-1e-3, 1e-3, size=(hidden_dim, output_dim))
            self.b2 = np.zeros(output_dim)
        else:
            self.w1 = np.zeros((input_dim, hidden_dim))
            self.b1 = np.zeros(hidden_dim)
            self.w2 = np.zeros((hidden_dim, output_dim))
            self.b2 = np.zeros(output_dim)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.input_dim, self.hidden_dim, self.output_dim

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def copy(self) -> "Mlp":
        out = Mlp(*self.dims, seed=self.seed, init=False)
        for k in PARAM_NAMES:
            setattr(out, k, getattr(self, k).copy())
        return out

    def forward(self, x: np.ndarray, cache: bool = False):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        pre = x @ self.w1 + self.b1
        h = np.maximum(pre, 0.0)
        out = h @ self.w2 + self.b2
        if single:
            out = out[0]
        if cache:
            return out, (x, pre, h)
        return out

    __call__ = forward

    def backward(self, cached, grad_out: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients given dL/d(output) for the cached batch."""
        x, pre, h = cached
        g = np.asarray(grad_out, dtype=float)
        if g.ndim == 1:
            g = g[None, :]
        grads = {"w2": h.T @ g, "b2": g.sum(0)}
        gh = (g @ self.w2.T) * (pre > 0)
        grads["w1"] = x.T @ gh
        grads["b1"] = gh.sum(0)
        return grads


def forward(net: Mlp, x):
    return net.forward(x)


def backward(net: Mlp, x, grad_out) -> dict[str, np.ndarray]:
    _, cached = net.forward(x, cache=True)
    return net.backward(cached, grad_out)


@dataclass
class Adam:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, net: Mlp, grads: dict[str, np.ndarray]) -> Mlp:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            p = getattr(net, k)
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k}")
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + self.eps)
        return net


def optimize_step(net: Mlp, grads, opt: Adam) -> Mlp:
    return opt.step(net, grads)


def soft_update(target: Mlp, online: Mlp, tau: float) -> Mlp:
    if target.dims != online.dims:
        raise ValueError(f"architecture mismatch: {target.dims} vs {online.dims}")
    for k in PARAM_NAMES:
        t = getattr(target, k)
        t *= 1.0 - tau
        t += tau * getattr(online, k)
    return target


def save_checkpoint(path, net: Mlp, meta: dict | None = None) -> Path:
    """Write an ``.npz`` container: float64 arrays, dims, seed and JSON metadata."""
    path = Path(path)
    header = {"version": CHECKPOINT_VERSION, "dims": list(net.dims), "seed": net.seed,
              "meta": meta or {}}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)),
                 **{k: np.ascontiguousarray(getattr(net, k), dtype=np.float64)
                    for k in PARAM_NAMES})
    return path


def load_checkpoint(path) -> tuple[Mlp, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
        net = Mlp(*header["dims"], seed=header["seed"], init=False)
        for k in PARAM_NAMES:
            arr = data[k]
            if arr.shape != getattr(net, k).shape:
                raise ValueError(f"checkpoint array {k} has shape {arr.shape}")
            setattr(net, k, arr.astype(np.float64))
    return net, header["meta"]
