"""Pre-training, fine-tuning, greedy evaluation and the DQN grid search."""
from __future__ import annotations

import csv
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable, Sequence

import numpy as np

from .agents import DqnAgent, Hyperparameters, QLearningAgent, epsilon
from .environment import TransportEnv, Workspace, get_preset

log = logging.getLogger(__name__)

PRETRAIN_CAP = 5000
FINETUNE_CAP = 500


@dataclass(frozen=True)
class TerminationSpec:
    window: int = 100
    flatness_tol: float = 1.0
    # raw-return spread guard: rejects periodic streams whose average cancels
    spread_tol: float = 100.0
    erg_threshold: float = 2.5
    pain_required: float = 0.0
    consecutive: int = 10

    def __post_init__(self):
        if self.window <= 0 or self.consecutive <= 0:
            raise ValueError("window and consecutive must be positive")


@dataclass
class EpisodeMetrics:
    ret: float
    steps: int
    avg_erg: float
    avg_pain: float
    distance: float
    sim_time: float
    done_reason: str | None
    pain_events: int = 0

    @property
    def pain_free(self) -> bool:
        return self.pain_events == 0


METRIC_FIELDS = ("ret", "steps", "avg_erg", "avg_pain", "distance", "sim_time")


def run_episode(env: TransportEnv, agent, eps: float, rng: np.random.Generator,
                learn: bool = True) -> EpisodeMetrics:
    state = env.reset()
    shaped = env.shaped(state)
    ret = dist = elapsed = 0.0
    ergs, pains = [], []
    reason = None
    if not shaped:
        reason = "empty_shaped_set"
    while shaped:
        a = agent.act(env, state, shaped, eps, rng)
        out = env.step(a)
        if learn:
            agent.observe(env, state, a, out, rng)
        ret += out.reward
        dist += out.distance
        elapsed += out.elapsed
        ergs.append(out.risk.avg_erg)
        pains.append(out.risk.avg_pain)
        state, shaped = out.next, out.shaped_next
        if out.done:
            reason = out.done_reason
            break
    n = len(ergs)
    return EpisodeMetrics(ret, n, float(np.mean(ergs)) if n else float("nan"),
                          float(np.mean(pains)) if n else float("nan"), dist, elapsed, reason,
                          int(sum(p > 0 for p in pains)))


class FlatnessDetector:
    """Fires once the ``window``-episode moving average of the return has stayed
    within ``tol`` (max - min) for ``window`` consecutive episodes.

    The raw returns of the last window must also span less than ``spread_tol``;
    otherwise an alternating stream would look flat on average.
    """

    def __init__(self, window: int = 100, tol: float = 1.0, spread_tol: float = 100.0):
        self.window = window
        self.tol = tol
        self.spread_tol = spread_tol
        self.returns: list[float] = []
        self.averages: list[float] = []
        self._sum = 0.0

    def push(self, ret: float) -> bool:
        self.returns.append(float(ret))
        self._sum += ret
        if len(self.returns) > self.window:
            self._sum -= self.returns[-self.window - 1]
        if len(self.returns) >= self.window:
            # recompute now and then to keep the running sum honest
            if len(self.returns) % 1000 == 0:
                self._sum = math.fsum(self.returns[-self.window:])
            self.averages.append(self._sum / self.window)
        return self.converged

    @property
    def converged(self) -> bool:
        if len(self.returns) < 2 * self.window or len(self.averages) < self.window:
            return False
        tail = self.averages[-self.window:]
        if max(tail) - min(tail) >= self.tol:
            return False
        raw = self.returns[-self.window:]
        return max(raw) - min(raw) < self.spread_tol


@dataclass
class TrainResult:
    agent: object
    episodes: list[EpisodeMetrics]
    converged: bool
    convergence_episode: int | None
    early_stopped: bool = False

    @property
    def returns(self) -> list[float]:
        return [m.ret for m in self.episodes]

    @property
    def n_episodes(self) -> int:
        return len(self.episodes)


def pretrain(env: TransportEnv, agent, spec: TerminationSpec = TerminationSpec(),
             max_episodes: int = PRETRAIN_CAP, seed: int = 0,
             early_stop: int | None = None,
             on_episode: Callable[[int, EpisodeMetrics], None] | None = None) -> TrainResult:
    """Epsilon-greedy training until the moving-average return flattens.

    ``early_stop`` caps the run (the grid search passes twice the epsilon decay).
    """
    if env.real:
        raise ValueError("pre-training runs in the simulated environment")
    rng = np.random.default_rng(seed)
    det = FlatnessDetector(spec.window, spec.flatness_tol, spec.spread_tol)
    episodes: list[EpisodeMetrics] = []
    cap = max_episodes if early_stop is None else min(max_episodes, early_stop)
    decay = agent.epsilon_decay_episodes
    for ep in range(cap):
        m = run_episode(env, agent, epsilon(ep, decay), rng)
        episodes.append(m)
        if on_episode is not None:
            on_episode(ep, m)
        if det.push(m.ret):
            return TrainResult(agent, episodes, True, len(episodes))
    stopped = early_stop is not None and early_stop <= max_episodes
    return TrainResult(agent, episodes, False, None, early_stopped=stopped)


@dataclass(frozen=True)
class FinetuneSchedule:
    eps_start: float = 0.2
    eps_decay_episodes: int = 50


def real_criterion_met(window: Sequence[EpisodeMetrics], spec: TerminationSpec) -> bool:
    return (len(window) >= spec.consecutive
            and all(m.avg_erg < spec.erg_threshold and m.pain_events == 0
                    and m.avg_pain <= spec.pain_required for m in window[-spec.consecutive:]))


def finetune(env: TransportEnv, agent, spec: TerminationSpec = TerminationSpec(),
             max_episodes: int = FINETUNE_CAP, seed: int = 0,
             schedule: FinetuneSchedule = FinetuneSchedule(),
             on_episode: Callable[[int, EpisodeMetrics], None] | None = None) -> TrainResult:
    """Keep learning in surrogate-real mode until ``consecutive`` clean episodes."""
    rng = np.random.default_rng(seed)
    episodes: list[EpisodeMetrics] = []
    for ep in range(max_episodes):
        eps = epsilon(ep, schedule.eps_decay_episodes, schedule.eps_start)
        m = run_episode(env, agent, eps, rng)
        episodes.append(m)
        if on_episode is not None:
            on_episode(ep, m)
        if real_criterion_met(episodes, spec):
            return TrainResult(agent, episodes, True, len(episodes))
    return TrainResult(agent, episodes, False, None)


@dataclass
class Evaluation:
    episodes: list[EpisodeMetrics]

    def mean(self, name: str) -> float:
        return float(np.mean([getattr(m, name) for m in self.episodes]))

    def std(self, name: str) -> float:
        return float(np.std([getattr(m, name) for m in self.episodes]))

    @property
    def pain_episodes(self) -> int:
        return sum(not m.pain_free for m in self.episodes)

    @property
    def pain_aborts(self) -> int:
        return sum(m.done_reason == "pain_abort" for m in self.episodes)

    def summary(self) -> dict:
        out = {}
        for k in METRIC_FIELDS:
            out[k] = self.mean(k)
            out[k + "_std"] = self.std(k)
        out["pain_episodes"] = self.pain_episodes
        out["pain_aborts"] = self.pain_aborts
        return out


def evaluate(env: TransportEnv, agent, n: int = 10, seed: int = 0) -> Evaluation:
    """``n`` greedy episodes without learning."""
    rng = np.random.default_rng(seed)
    return Evaluation([run_episode(env, agent, 0.0, rng, learn=False) for _ in range(n)])


# ------------------------------------------------------------------ search --

TABLE_GRID: dict[str, tuple] = {
    "learning_rate": (1e-5, 1e-4, 1e-3),
    "discount": (0.5, 0.9, 0.999),
    "epsilon_decay_episodes": (1500, 2000, 2500),
    "soft_update_rate": (1e-4, 1e-3, 1e-2),
    "buffer_size": (5000, 10000, 20000),
    "batch_size": (64, 128, 256),
    "hidden_dim": (128, 256, 512),
}


def grid_combinations(grid: dict[str, Iterable]) -> list[Hyperparameters]:
    names = [f.name for f in fields(Hyperparameters)]
    unknown = set(grid) - set(names)
    if unknown:
        raise ValueError(f"unknown hyperparameters in grid: {sorted(unknown)}")
    base = Hyperparameters()
    axes = [list(grid.get(n, (getattr(base, n),))) for n in names]
    if any(len(a) == 0 for a in axes):
        raise ValueError("every grid axis needs at least one value")
    return [Hyperparameters(**dict(zip(names, combo))) for combo in itertools.product(*axes)]


@dataclass(frozen=True)
class EnvSpec:
    """Picklable recipe for an environment (worker processes build their own)."""
    participant: str = "1.79"
    kind: str = "dqn"
    ws: Workspace = field(default_factory=Workspace)
    step_limit: int = 100
    diagonal: bool = False

    def build(self) -> TransportEnv:
        return TransportEnv(get_preset(self.participant, self.ws), self.kind, self.ws,
                            step_limit=self.step_limit, diagonal=self.diagonal)


@dataclass
class HpoResult:
    index: int
    hyperparameters: Hyperparameters
    seed: int
    converged: bool
    convergence_episode: int | None
    episodes: int
    early_stopped: bool
    reward: float
    avg_pain: float
    avg_erg: float
    steps: float
    agent: object = field(default=None, repr=False, compare=False)

    def rank_key(self):
        return (self.avg_pain > 0, self.avg_erg > 2.5, self.steps, -self.reward, self.index)

    def row(self) -> dict:
        d = {"index": self.index, **self.hyperparameters.to_dict(), "seed": self.seed,
             "converged": int(self.converged),
             "convergence_episode": "" if self.convergence_episode is None
             else self.convergence_episode,
             "episodes": self.episodes, "early_stopped": int(self.early_stopped),
             "reward": f"{self.reward:.6f}", "avg_pain": f"{self.avg_pain:.6f}",
             "avg_erg": f"{self.avg_erg:.6f}", "steps": f"{self.steps:.3f}"}
        return d


def combination_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def _run_combination(args) -> HpoResult:
    index, hp, env_spec, base_seed, max_episodes, spec, n_eval = args
    seed = combination_seed(base_seed, index)
    env = env_spec.build()
    agent = DqnAgent(hp, env.n_actions, seed=seed)
    res = pretrain(env, agent, spec, max_episodes=max_episodes, seed=seed,
                   early_stop=2 * hp.epsilon_decay_episodes)
    ev = evaluate(env, agent, n_eval, seed=seed)
    return HpoResult(index, hp, seed, res.converged, res.convergence_episode, res.n_episodes,
                     res.early_stopped, ev.mean("ret"), ev.mean("avg_pain"), ev.mean("avg_erg"),
                     ev.mean("steps"), agent)


def rank(results: Iterable[HpoResult]) -> list[HpoResult]:
    """Pain-free first, then erg <= 2.5, then fewest steps, then highest reward."""
    return sorted(results, key=HpoResult.rank_key)


def hpo(grid: dict[str, Iterable], env_spec: EnvSpec = EnvSpec(), max_episodes: int = PRETRAIN_CAP,
        seed: int = 0, workers: int = 1, spec: TerminationSpec = TerminationSpec(),
        n_eval: int = 10, sink: Callable[[HpoResult], None] | None = None) -> list[HpoResult]:
    """Train one DQN per grid combination and return them ranked.

    Each run is early-stopped after twice its epsilon-decay duration.
    ``sink`` receives results as they complete (append-only CSV, logging).
    """
    combos = grid_combinations(grid)
    if not combos:
        raise ValueError("empty grid")
    jobs = [(i, hp, env_spec, seed, max_episodes, spec, n_eval) for i, hp in enumerate(combos)]
    results = []
    if workers <= 1:
        for job in jobs:
            r = _run_combination(job)
            results.append(r)
            if sink:
                sink(r)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for r in pool.map(_run_combination, jobs):
                results.append(r)
                if sink:
                    sink(r)
    return rank(results)


HPO_COLUMNS = ["index", *(f.name for f in fields(Hyperparameters)), "seed", "converged",
               "convergence_episode", "episodes", "early_stopped", "reward", "avg_pain",
               "avg_erg", "steps"]


def write_hpo_csv(path, results: Sequence[HpoResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HPO_COLUMNS)
        w.writeheader()
        for r in results:
            w.writerow(r.row())


def make_agent(kind: str, n_actions: int, hp: Hyperparameters | None = None, seed: int = 0,
               **ql_kwargs):
    if kind == "dqn":
        return DqnAgent(hp or Hyperparameters(), n_actions, seed=seed)
    return QLearningAgent(n_actions, **ql_kwargs)


__all__ = [
    "TerminationSpec", "EpisodeMetrics", "run_episode", "FlatnessDetector", "TrainResult",
    "pretrain", "finetune", "FinetuneSchedule", "Evaluation", "evaluate", "TABLE_GRID",
    "grid_combinations", "EnvSpec", "HpoResult", "hpo", "rank", "write_hpo_csv", "make_agent",
    "asdict",
]
