import csv
import json

import pytest
import yaml

from ergocobot import cli
from ergocobot.cli import (EXIT_CONFIG, EXIT_IO, EXIT_NOT_CONVERGED, EXIT_OK, ConfigError,
                           dump_config, load_config, main)

SMALL_GRID = {"learning_rate": [1e-3], "discount": [0.9, 0.99], "epsilon_decay_episodes": [5],
              "soft_update_rate": [1e-2], "buffer_size": [200], "batch_size": [8],
              "hidden_dim": [8]}


def write_cfg(path, doc):
    path.write_text(yaml.safe_dump(doc))
    return path


def run(argv, environ=None):
    return main([str(a) for a in argv], environ=environ or {})


def test_unknown_key_rejected_with_path(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.yaml", {"gap": {"joint_bais": 1.0}})
    assert run(["pretrain", "--config", cfg, "--out", tmp_path / "o"]) == EXIT_CONFIG
    assert "gap.joint_bais" in capsys.readouterr().err


def test_wrong_type_rejected(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", {"episodes": {"pretrain": "many"}})
    with pytest.raises(ConfigError, match="episodes.pretrain"):
        load_config(cfg, environ={})


def test_unknown_participant(tmp_path):
    assert run(["pretrain", "--participant", "2.10", "--out", tmp_path]) == EXIT_CONFIG


def test_precedence_file_env_flag(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", {"seed": 3, "gap": {"joint_bias": 0.5}})
    env = {"ERGOCOBOT_SEED": "4", "ERGOCOBOT_GAP__JOINT_BIAS": "1.5", "OTHER": "x"}
    got = load_config(cfg, environ=env)
    assert got["seed"] == 4 and got["gap"]["joint_bias"] == 1.5
    assert load_config(cfg, environ=env, flags={"seed": 9})["seed"] == 9


def test_env_override_unknown_key():
    with pytest.raises(ConfigError, match="gap.nope"):
        load_config(None, environ={"ERGOCOBOT_GAP__NOPE": "1"})


def test_config_round_trip(tmp_path):
    cfg = load_config(write_cfg(tmp_path / "c.yaml", {"algorithm": "ql", "seed": 2}), {})
    text = dump_config(cfg)
    again = load_config(write_cfg(tmp_path / "d.yaml", yaml.safe_load(text)), {})
    assert dump_config(again) == text


def test_pretrain_cap_reports_non_convergence(tmp_path):
    out = tmp_path / "o"
    code = run(["pretrain", "--algorithm", "ql", "--episodes", 20, "--out", out])
    assert code == EXIT_NOT_CONVERGED
    assert (out / "pretrain.json").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "pretrain" and manifest["seed"] == 0
    curve = (out / "pretrain_curve.jsonl").read_text().splitlines()
    assert len(curve) == 20 and json.loads(curve[-1])["episode"] == 20
    step = json.loads((out / "pretrain_steps.jsonl").read_text().splitlines()[0])
    assert "reward" in step


def test_eval_missing_checkpoint(tmp_path):
    code = run(["eval", "--checkpoint", tmp_path / "none.npz", "--out", tmp_path / "o"])
    assert code == EXIT_IO


def test_eval_requires_checkpoint(tmp_path):
    assert run(["eval", "--out", tmp_path / "o"]) == EXIT_CONFIG


def test_checkpoint_algorithm_mismatch(tmp_path):
    out = tmp_path / "o"
    run(["pretrain", "--algorithm", "ql", "--episodes", 5, "--out", out])
    code = run(["eval", "--algorithm", "dqn", "--checkpoint", out / "pretrain.json",
                "--out", tmp_path / "e"])
    assert code == EXIT_CONFIG


def test_eval_sim_deterministic(tmp_path):
    out = tmp_path / "o"
    run(["pretrain", "--algorithm", "ql", "--episodes", 30, "--out", out])
    code = run(["eval", "--sim", "--algorithm", "ql", "--checkpoint", out / "pretrain.json",
                "--out", tmp_path / "e"])
    assert code == EXIT_OK
    row = cli.read_report(tmp_path / "e" / "report.csv")[0]
    assert row["phase"] == "Sim/Sim" and float(row["ret_std"]) == 0.0


def test_output_dir_is_a_file(tmp_path):
    target = tmp_path / "file"
    target.write_text("x")
    assert run(["pretrain", "--algorithm", "ql", "--episodes", 5, "--out", target]) == EXIT_IO


def protocol(tmp_path, name, *extra):
    out = tmp_path / name
    cfg = write_cfg(tmp_path / f"{name}.yaml",
                    {"algorithm": "ql", "dump_samples": True,
                     "episodes": {"pretrain": 40, "finetune": 15, "eval": 3}})
    code = run(["protocol", "--config", cfg, "--out", out, *extra])
    return code, out


def test_protocol_skip_finetune(tmp_path):
    code, out = protocol(tmp_path, "a", "--skip-finetune")
    assert code == EXIT_NOT_CONVERGED  # 40 episodes cannot satisfy the flatness window
    phases = [r["phase"] for r in cli.read_report(out / "report.csv")]
    assert phases == ["Sim/Sim", "Sim/Real"]
    assert not (out / "finetune.json").exists()
    with open(out / "simreal_samples.csv") as fh:
        assert next(csv.reader(fh)) == ["timestamp", "shoulder", "elbow", "erg", "pain"]


def test_protocol_full_rerun_byte_identical(tmp_path):
    _, a = protocol(tmp_path, "a")
    _, b = protocol(tmp_path, "b")
    assert [r["phase"] for r in cli.read_report(a / "report.csv")] == list(cli.PHASES)
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    ma["config"].pop("out"), mb["config"].pop("out")
    assert ma["config"] == mb["config"]
    for f in ("report.csv", "pretrain_curve.jsonl", "finetune_curve.jsonl",
              "simreal_samples.csv"):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_report_command_collects_runs(tmp_path, capsys):
    protocol(tmp_path, "a", "--skip-finetune")
    capsys.readouterr()
    assert run(["report", "--out", tmp_path / "a"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "Sim/Real" in text and "1.79" in text
    assert run(["report", "--out", tmp_path / "empty"]) == EXIT_IO


def test_hpo_rejects_ql_and_empty_grid(tmp_path):
    assert run(["hpo", "--algorithm", "ql", "--out", tmp_path / "o"]) == EXIT_CONFIG
    assert run(["hpo", "--out", tmp_path / "o"]) == EXIT_CONFIG


def test_hpo_small_grid_rerun_identical(tmp_path):
    cfg = write_cfg(tmp_path / "g.yaml", {"grid": SMALL_GRID,
                                          "episodes": {"pretrain": 50, "eval": 2}})
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = run(["hpo", "--config", cfg, "--out", out])
        assert code in (EXIT_OK, EXIT_NOT_CONVERGED)
        outs.append(out)
    rows = list(csv.DictReader(open(outs[0] / "hpo.csv")))
    assert len(rows) == 2
    assert int(rows[0]["episodes"]) <= 2 * 5
    assert (outs[0] / "hpo.csv").read_bytes() == (outs[1] / "hpo.csv").read_bytes()
    assert (outs[0] / "champion.npz").exists()


def test_body_and_anchor_override(tmp_path):
    body = {"height": 1.79, "shoulder_span": 0.42, "upper_arm_length": 0.35,
            "forearm_length": 0.29}
    cfg = load_config(write_cfg(tmp_path / "c.yaml", {"body": body, "anchor": [2.30, 0.909]}),
                      {})
    preset = cli.build_preset(cfg, cli.Workspace())
    assert preset.body.upper_arm_length == 0.35 and preset.anchor == (2.30, 0.909)
    with pytest.raises(ConfigError, match="body"):
        load_config(write_cfg(tmp_path / "d.yaml", {"body": {"height": 1.7}}), {})
