"""Command-line front end: config handling, the four-phase protocol and reports.

Precedence for every setting: built-in defaults < config file < environment
variables (``ERGOCOBOT_<KEY>``, nested keys joined with ``__``) < flags.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from contextlib import ExitStack
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .agents import CHAMPION, QL_DEFAULTS, DqnAgent, Hyperparameters, QLearningAgent
from .environment import ConfigurationError, TransportEnv, Workspace, get_preset
from .gap import GapConfig, SurrogateObserver
from .kinematics import BodyParams, Point2
from .training import (METRIC_FIELDS, EnvSpec, FinetuneSchedule, TerminationSpec, evaluate,
                       finetune, hpo, pretrain, write_hpo_csv, HPO_COLUMNS)

log = logging.getLogger("ergocobot")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_IO = 4
EXIT_INTERRUPTED = 130

ENV_PREFIX = "ERGOCOBOT_"

DEFAULTS: dict = {
    "algorithm": "dqn",
    "participant": "1.79",
    "body": None,
    "anchor": None,
    "seed": 0,
    "out": "runs/default",
    "checkpoint": None,
    "workers": 1,
    "diagonal": False,
    "step_logs": True,
    "dump_samples": False,
    "skip_finetune": False,
    "episodes": {"pretrain": 5000, "finetune": 500, "eval": 10},
    "hyperparameters": CHAMPION.to_dict(),
    "ql": dict(QL_DEFAULTS),
    "grid": {},
    "gap": {f.name: f.default for f in fields(GapConfig)},
    "gap_seed": None,
    "termination": {f.name: f.default for f in fields(TerminationSpec)},
}

_BODY_KEYS = {f.name for f in fields(BodyParams)}


class ConfigError(ValueError):
    """Raised with a dotted field path for any schema violation."""


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"{where}: unknown key")
        if isinstance(base[k], dict) and k not in ("grid",):
            if not isinstance(v, dict):
                raise ConfigError(f"{where}: expected a mapping")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = v
    return out


def _check_number(value, where, kind=float, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if kind is int and int(value) != value:
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(f"{where}: must be positive")
    return kind(value)


def validate(cfg: dict) -> dict:
    """Type-check a merged config and normalise numeric fields in place."""
    if cfg["algorithm"] not in ("ql", "dqn"):
        raise ConfigError(f"algorithm: expected 'ql' or 'dqn', got {cfg['algorithm']!r}")
    cfg["participant"] = str(cfg["participant"])
    cfg["seed"] = _check_number(cfg["seed"], "seed", int)
    if cfg["gap_seed"] is not None:
        cfg["gap_seed"] = _check_number(cfg["gap_seed"], "gap_seed", int)
    cfg["workers"] = _check_number(cfg["workers"], "workers", int, positive=True)
    for k in ("diagonal", "step_logs", "dump_samples", "skip_finetune"):
        if not isinstance(cfg[k], bool):
            raise ConfigError(f"{k}: expected true or false")
    for k, v in cfg["episodes"].items():
        cfg["episodes"][k] = _check_number(v, f"episodes.{k}", int, positive=True)
    hp_types = {f.name: f.type for f in fields(Hyperparameters)}
    for k, v in cfg["hyperparameters"].items():
        kind = int if hp_types[k] in (int, "int") else float
        cfg["hyperparameters"][k] = _check_number(v, f"hyperparameters.{k}", kind)
    for k, v in cfg["ql"].items():
        cfg["ql"][k] = _check_number(v, f"ql.{k}", int if k == "epsilon_decay_episodes" else float)
    for k, v in cfg["gap"].items():
        cfg["gap"][k] = _check_number(v, f"gap.{k}")
    for k, v in cfg["termination"].items():
        kind = int if k in ("window", "consecutive") else float
        cfg["termination"][k] = _check_number(v, f"termination.{k}", kind)
    grid = cfg["grid"]
    if not isinstance(grid, dict):
        raise ConfigError("grid: expected a mapping of name -> list")
    for k, v in grid.items():
        if k not in hp_types:
            raise ConfigError(f"grid.{k}: unknown key")
        if not isinstance(v, list) or not v:
            raise ConfigError(f"grid.{k}: expected a non-empty list")
        kind = int if hp_types[k] in (int, "int") else float
        grid[k] = [_check_number(x, f"grid.{k}[{i}]", kind) for i, x in enumerate(v)]
    body = cfg["body"]
    if body is not None:
        if not isinstance(body, dict) or set(body) != _BODY_KEYS:
            raise ConfigError(f"body: expected exactly the keys {sorted(_BODY_KEYS)}")
        cfg["body"] = {k: _check_number(v, f"body.{k}", positive=True) for k, v in body.items()}
    if cfg["anchor"] is not None:
        a = cfg["anchor"]
        if not isinstance(a, list) or len(a) != 2:
            raise ConfigError("anchor: expected [x, z]")
        cfg["anchor"] = [_check_number(v, f"anchor[{i}]") for i, v in enumerate(a)]
    try:
        Hyperparameters(**cfg["hyperparameters"])
        GapConfig(**cfg["gap"])
        TerminationSpec(**cfg["termination"])
        if cfg["body"] is not None:
            BodyParams(**cfg["body"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def env_overrides(environ) -> dict:
    """``ERGOCOBOT_GAP__JOINT_BIAS=1.5`` becomes ``{"gap": {"joint_bias": 1.5}}``."""
    out: dict = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        parts = key[len(ENV_PREFIX):].lower().split("__")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = yaml.safe_load(raw)
    return out


def load_config(path=None, environ=None, flags: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML/JSON ({exc})") from exc
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        cfg = _merge(cfg, doc)
    cfg = _merge(cfg, env_overrides(os.environ if environ is None else environ))
    if flags:
        cfg = _merge(cfg, flags)
    return validate(cfg)


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def write_manifest(out: Path, cfg: dict, command: str) -> Path:
    doc = {
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "gap_seed": gap_seed(cfg),
        "versions": {"ergocobot": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "config": cfg,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    (out / "config.yaml").write_text(dump_config(cfg))
    return path


# ---------------------------------------------------------------- builders --

def gap_seed(cfg: dict) -> int:
    return cfg["seed"] if cfg["gap_seed"] is None else cfg["gap_seed"]


def build_preset(cfg: dict, ws: Workspace):
    from dataclasses import replace
    p = get_preset(cfg["participant"], ws)
    if cfg["body"] is not None:
        p = replace(p, body=BodyParams(**cfg["body"]))
    if cfg["anchor"] is not None:
        p = replace(p, anchor=Point2(*cfg["anchor"]))
    return p


def build_env(cfg: dict, real: bool, log_fh=None, dump_fh=None) -> TransportEnv:
    ws = Workspace()
    preset = build_preset(cfg, ws)
    observer = None
    if real:
        observer = SurrogateObserver(preset.model(), GapConfig(**cfg["gap"]), gap_seed(cfg),
                                     dump_fh)
    return TransportEnv(preset, cfg["algorithm"], ws, observer=observer,
                        diagonal=cfg["diagonal"], log=log_fh)


def build_agent(cfg: dict, env: TransportEnv):
    if cfg["algorithm"] == "dqn":
        return DqnAgent(Hyperparameters(**cfg["hyperparameters"]), env.n_actions, seed=cfg["seed"])
    return QLearningAgent(env.n_actions, **cfg["ql"])


def load_agent(cfg: dict, path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    try:
        if cfg["algorithm"] == "dqn":
            return DqnAgent.load(path)
        return QLearningAgent.load(path)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"checkpoint: {path} does not match algorithm "
                          f"{cfg['algorithm']!r} ({exc})") from exc


def checkpoint_name(cfg: dict, phase: str) -> str:
    return f"{phase}.{'npz' if cfg['algorithm'] == 'dqn' else 'json'}"


# ----------------------------------------------------------------- outputs --

PHASES = ("Sim/Sim", "Sim/Real", "Real/Real")
REPORT_COLUMNS = ["participant", "algorithm", "phase", "converged", "episodes",
                  *[c for f in METRIC_FIELDS for c in (f, f + "_std")],
                  "pain_episodes", "pain_aborts"]


class CurveWriter:
    """Per-episode learning-curve records as JSON lines."""

    def __init__(self, fh, phase: str):
        self.fh = fh
        self.phase = phase

    def __call__(self, ep: int, m) -> None:
        self.fh.write(json.dumps({"phase": self.phase, "episode": ep + 1, "return": m.ret,
                                  "steps": m.steps, "avg_erg": m.avg_erg,
                                  "avg_pain": m.avg_pain, "done_reason": m.done_reason})
                      + "\n")


def report_row(cfg, phase, evaluation, converged, episodes) -> dict:
    s = evaluation.summary()
    row = {"participant": cfg["participant"], "algorithm": cfg["algorithm"], "phase": phase,
           "converged": "" if converged is None else int(converged),
           "episodes": "" if episodes is None else episodes}
    for k in REPORT_COLUMNS[5:]:
        v = s[k]
        row[k] = v if isinstance(v, int) else f"{v:.6f}"
    return row


def write_report(out: Path, rows: list[dict]) -> tuple[Path, Path]:
    csv_path = out / "report.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    txt_path = out / "report.txt"
    txt_path.write_text(format_report(rows))
    return csv_path, txt_path


def _pm(row, k, digits=2):
    m, s = float(row[k]), float(row[k + "_std"])
    return f"{m:.{digits}f}" if s == 0 else f"{m:.{digits}f}±{s:.{digits}f}"


def format_report(rows: list[dict]) -> str:
    head = (f"{'Height':<7}{'Alg':<5}{'Train/Exec':<11}{'Reward':>15}{'Pain':>13}"
            f"{'Erg':>13}{'Steps':>12}{'Dist (m)':>15}{'Time (s)':>14}  Conv")
    lines = [head, "-" * len(head)]
    for r in rows:
        time = "---" if r["phase"] == "Sim/Sim" else _pm(r, "sim_time", 1)
        conv = {"1": "yes", "0": "NO", "": "-"}[str(r["converged"])]
        lines.append(f"{r['participant']:<7}{r['algorithm']:<5}{r['phase']:<11}"
                     f"{_pm(r, 'ret', 1):>15}{_pm(r, 'avg_pain'):>13}{_pm(r, 'avg_erg'):>13}"
                     f"{_pm(r, 'steps', 1):>12}{_pm(r, 'distance', 3):>15}{time:>14}  {conv}")
    return "\n".join(lines) + "\n"


def read_report(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- commands --

def _open(stack: ExitStack, path: Path, enabled: bool = True):
    return stack.enter_context(open(path, "w")) if enabled else None


def _termination(cfg) -> TerminationSpec:
    return TerminationSpec(**cfg["termination"])


def run_pretrain(cfg: dict, out: Path, stack: ExitStack):
    env = build_env(cfg, real=False, log_fh=_open(stack, out / "pretrain_steps.jsonl",
                                                  cfg["step_logs"]))
    agent = build_agent(cfg, env)
    curve = CurveWriter(_open(stack, out / "pretrain_curve.jsonl"), "pretrain")
    res = pretrain(env, agent, _termination(cfg), cfg["episodes"]["pretrain"], cfg["seed"],
                   on_episode=curve)
    agent.save(out / checkpoint_name(cfg, "pretrain"))
    log.info("pretrain: %d episodes, converged=%s at %s", res.n_episodes, res.converged,
             res.convergence_episode)
    return agent, res


def run_finetune(cfg: dict, agent, out: Path, stack: ExitStack):
    env = build_env(cfg, real=True,
                    log_fh=_open(stack, out / "finetune_steps.jsonl", cfg["step_logs"]),
                    dump_fh=_open(stack, out / "finetune_samples.csv", cfg["dump_samples"]))
    curve = CurveWriter(_open(stack, out / "finetune_curve.jsonl"), "finetune")
    res = finetune(env, agent, _termination(cfg), cfg["episodes"]["finetune"], cfg["seed"],
                   FinetuneSchedule(), on_episode=curve)
    agent.save(out / checkpoint_name(cfg, "finetune"))
    log.info("finetune: %d episodes, converged=%s", res.n_episodes, res.converged)
    return agent, res


def run_eval(cfg: dict, agent, real: bool, out: Path, stack: ExitStack, tag: str):
    env = build_env(cfg, real, dump_fh=_open(stack, out / f"{tag}_samples.csv",
                                             real and cfg["dump_samples"]))
    return evaluate(env, agent, cfg["episodes"]["eval"], seed=cfg["seed"])


def cmd_pretrain(cfg, out, stack):
    _, res = run_pretrain(cfg, out, stack)
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def _require_checkpoint(cfg):
    if not cfg["checkpoint"]:
        raise ConfigError("checkpoint: required for this command")
    return load_agent(cfg, cfg["checkpoint"])


def cmd_finetune(cfg, out, stack):
    agent = _require_checkpoint(cfg)
    _, res = run_finetune(cfg, agent, out, stack)
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_eval(cfg, out, stack):
    agent = _require_checkpoint(cfg)
    ev = run_eval(cfg, agent, cfg["eval_real"], out, stack, "eval")
    row = report_row(cfg, "Sim/Real" if cfg["eval_real"] else "Sim/Sim", ev, None, None)
    write_report(out, [row])
    print(format_report([row]), end="")
    return EXIT_OK


def cmd_protocol(cfg, out, stack):
    if cfg["checkpoint"]:
        agent, pre = load_agent(cfg, cfg["checkpoint"]), None
    else:
        agent, pre = run_pretrain(cfg, out, stack)
    rows = []
    conv = None if pre is None else pre.converged
    n = None if pre is None else pre.n_episodes
    rows.append(report_row(cfg, "Sim/Sim", run_eval(cfg, agent, False, out, stack, "simsim"),
                           conv, n))
    rows.append(report_row(cfg, "Sim/Real", run_eval(cfg, agent, True, out, stack, "simreal"),
                           conv, n))
    ok = conv is not False
    if not cfg["skip_finetune"]:
        agent, ft = run_finetune(cfg, agent, out, stack)
        rows.append(report_row(cfg, "Real/Real",
                               run_eval(cfg, agent, True, out, stack, "realreal"),
                               ft.converged, ft.n_episodes))
        ok = ok and ft.converged
    write_report(out, rows)
    print(format_report(rows), end="")
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def cmd_hpo(cfg, out, stack):
    if cfg["algorithm"] != "dqn":
        raise ConfigError("algorithm: the grid search is only defined for dqn")
    if not cfg["grid"]:
        raise ConfigError("grid: empty grid")
    partial = stack.enter_context(open(out / "hpo_partial.csv", "w", newline=""))
    w = csv.DictWriter(partial, fieldnames=HPO_COLUMNS)
    w.writeheader()

    def sink(r):
        w.writerow(r.row())
        partial.flush()

    env_spec = EnvSpec(cfg["participant"], "dqn", Workspace(), diagonal=cfg["diagonal"])
    if cfg["body"] is not None or cfg["anchor"] is not None:
        raise ConfigError("body/anchor overrides are not supported by hpo")
    results = hpo(cfg["grid"], env_spec, cfg["episodes"]["pretrain"], cfg["seed"],
                  cfg["workers"], _termination(cfg), cfg["episodes"]["eval"], sink)
    write_hpo_csv(out / "hpo.csv", results)
    results[0].agent.save(out / "champion.npz")
    (out / "champion.json").write_text(json.dumps(results[0].hyperparameters.to_dict(),
                                                  indent=2, sort_keys=True) + "\n")
    return EXIT_OK if any(r.converged for r in results) else EXIT_NOT_CONVERGED


def cmd_report(cfg, out, stack, paths=()):
    rows = []
    targets = [Path(p) for p in paths] or [out]
    for t in targets:
        files = [t] if t.is_file() else sorted(t.rglob("report.csv"))
        for f in files:
            rows.extend(read_report(f))
    if not rows:
        raise FileNotFoundError(f"no report.csv under {', '.join(map(str, targets))}")
    text = format_report(rows)
    print(text, end="")
    if not paths:
        (out / "summary.txt").write_text(text)
    return EXIT_OK


COMMANDS = {"hpo": cmd_hpo, "protocol": cmd_protocol, "pretrain": cmd_pretrain,
            "finetune": cmd_finetune, "eval": cmd_eval, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ergocobot", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path)
        p.add_argument("--participant")
        p.add_argument("--algorithm", choices=("ql", "dqn"))
        p.add_argument("--episodes", type=int, help="episode cap for the training phase")
        p.add_argument("--workers", type=int)
        p.add_argument("--skip-finetune", action="store_true", default=None)
        p.add_argument("--checkpoint", type=Path)
        if name == "eval":
            p.add_argument("--sim", action="store_true",
                           help="evaluate in simulation instead of the surrogate")
        if name == "report":
            p.add_argument("paths", nargs="*", type=Path)
    return parser


def _flags(args) -> dict:
    flags: dict = {}
    for k in ("seed", "participant", "algorithm", "workers", "skip_finetune"):
        v = getattr(args, k)
        if v is not None:
            flags[k] = v
    if args.out is not None:
        flags["out"] = str(args.out)
    if args.checkpoint is not None:
        flags["checkpoint"] = str(args.checkpoint)
    if args.episodes is not None:
        phase = "finetune" if args.command == "finetune" else (
            "eval" if args.command == "eval" else "pretrain")
        flags["episodes"] = {phase: args.episodes}
    return flags


def main(argv=None, environ=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, environ, _flags(args))
        get_preset(cfg["participant"])
    except (ConfigError, ConfigurationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    out = Path(cfg["out"])
    run_cfg = dict(cfg, eval_real=not getattr(args, "sim", False))
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, cfg, args.command)
        with ExitStack() as stack:
            if args.command == "report":
                return cmd_report(run_cfg, out, stack, args.paths)
            return COMMANDS[args.command](run_cfg, out, stack)
    except (ConfigError, ConfigurationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except KeyboardInterrupt:
        print("interrupted; partial outputs flushed", file=sys.stderr)
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
