import json
import subprocess
import sys

import numpy as np
import pytest

from ctrreach.cli import main


def _experiment_config(tmp_path, systems=("system3",), timesteps=400,
                       curriculum_steps=200, name="exp.json"):
    cfg = {
        "env": {
            "systems": list(systems),
            "rotation_mode": "free",
            "joint_frame": "egocentric",
            "curriculum": {"kind": "decay", "initial": 20.0, "final": 1.0,
                           "timesteps": curriculum_steps},
            "max_episode_steps": 20,
            "seed": 0,
        },
        "train": {
            "total_timesteps": timesteps,
            "warmup_steps": 50,
            "eval_every": timesteps,
            "eval_episodes": 2,
            "updates_per_step": 0.1,
            "buffer_capacity": 5000,
            "batch_size": 32,
            "seed": 0,
        },
    }
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_missing_system_file_exits_nonzero(tmp_path, capsys):
    cfg = _experiment_config(tmp_path, systems=("/nope/robot.json",))
    rc = main(["train", "--config", str(cfg), "--out", str(tmp_path / "out")])
    captured = capsys.readouterr()
    assert rc != 0
    assert "/nope/robot.json" in captured.err


def test_train_deterministic_logs(tmp_path):
    cfg = _experiment_config(tmp_path)
    rc1 = main(["train", "--config", str(cfg), "--out", str(tmp_path / "a"),
                "--timesteps", "400", "--seed", "7"])
    rc2 = main(["train", "--config", str(cfg), "--out", str(tmp_path / "b"),
                "--timesteps", "400", "--seed", "7"])
    assert rc1 == rc2 == 0
    log_a = (tmp_path / "a" / "training_log.csv").read_text()
    log_b = (tmp_path / "b" / "training_log.csv").read_text()
    assert log_a == log_b
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 7
    assert any("checkpoint.npz" in o for o in manifest["outputs"])


def test_four_system_config_logs_dim_14(tmp_path, capsys):
    cfg = _experiment_config(
        tmp_path, systems=("system0", "system1", "system2", "system3"),
        timesteps=60, curriculum_steps=50)
    rc = main(["train", "--config", str(cfg), "--out", str(tmp_path / "out")])
    captured = capsys.readouterr()
    assert rc == 0
    assert "observation dim 14" in captured.err


def test_evaluate_row_count_and_stdout(tmp_path, capsys, tiny_checkpoint):
    ckpt_path, _, _ = tiny_checkpoint
    rc = main(["evaluate", "--checkpoint", str(ckpt_path),
               "--episodes", "10", "--max-steps", "10",
               "--out", str(tmp_path / "eval"), "--seed", "3"])
    captured = capsys.readouterr()
    assert rc == 0
    lines = (tmp_path / "eval" / "ik_eval.csv").read_text().splitlines()
    rows = [l for l in lines if l and not l.startswith("#")][1:]
    assert len(rows) == 10
    printed = dict(l.split(": ") for l in captured.out.strip().splitlines())
    errors = np.array([float(r.split(",")[20]) for r in rows])
    assert float(printed["mean_error_mm"]) == pytest.approx(errors.mean(),
                                                            abs=1e-5)
    assert float(printed["success_rate"]) == pytest.approx(
        (errors < 1.0).mean(), abs=1e-9)


def test_follow_path_row_count(tmp_path, tiny_checkpoint, capsys):
    ckpt_path, _, _ = tiny_checkpoint
    path_spec = tmp_path / "helix.json"
    path_spec.write_text(json.dumps({
        "kind": "helix", "num_points": 100,
        "center": [0.0, 0.0, 40.0], "radius": 5.0, "pitch": 3.0,
        "turns": 2.0}))
    rc = main(["follow-path", "--checkpoint", str(ckpt_path),
               "--path", str(path_spec), "--out", str(tmp_path / "run"),
               "--steps-per-goal", "5", "--seed", "1"])
    assert rc == 0
    rows = [l for l in (tmp_path / "run" / "tracking.csv").read_text()
            .splitlines() if l and not l.startswith("#")][1:]
    assert len(rows) == 100


def test_follow_path_jacobian_switch(tmp_path, tiny_checkpoint):
    ckpt_path, _, _ = tiny_checkpoint
    path_spec = tmp_path / "line.json"
    path_spec.write_text(json.dumps({
        "kind": "line", "num_points": 5,
        "start": [0.0, -20.0, 60.0], "end": [2.0, -18.0, 63.0]}))
    rc = main(["follow-path", "--checkpoint", str(ckpt_path),
               "--path", str(path_spec), "--out", str(tmp_path / "jac"),
               "--controller", "jacobian", "--kp", "2", "--damping", "0.45",
               "--seed", "1"])
    assert rc == 0
    assert (tmp_path / "jac" / "tracking.csv").exists()


def test_noise_flag_adds_defaults(tmp_path, tiny_checkpoint):
    ckpt_path, _, _ = tiny_checkpoint
    path_spec = tmp_path / "line.json"
    path_spec.write_text(json.dumps({
        "kind": "line", "num_points": 3,
        "start": [0.0, -20.0, 60.0], "end": [1.0, -19.0, 61.0]}))
    rc = main(["follow-path", "--checkpoint", str(ckpt_path),
               "--path", str(path_spec), "--out", str(tmp_path / "noisy"),
               "--noise", "--seed", "1"])
    assert rc == 0


def test_export_workspace_cli(tmp_path, tiny_checkpoint):
    ckpt_path, _, _ = tiny_checkpoint
    rc = main(["export-workspace", "--checkpoint", str(ckpt_path),
               "--episodes", "8", "--max-steps", "10",
               "--out", str(tmp_path / "ws"), "--seed", "2"])
    assert rc == 0
    assert (tmp_path / "ws" / "workspace.csv").exists()
    assert (tmp_path / "ws" / "rotation_errors.csv").exists()


def test_incompatible_checkpoint_rejected(tmp_path, tiny_checkpoint, capsys):
    ckpt_path, _, _ = tiny_checkpoint
    two_system_cfg = tmp_path / "two.json"
    two_system_cfg.write_text(json.dumps({
        "env": {"systems": ["system2", "system3"], "seed": 0,
                "curriculum": {"kind": "constant", "initial": 1.0,
                               "final": 1.0}}}))
    path_spec = tmp_path / "line.json"
    path_spec.write_text(json.dumps({
        "kind": "line", "num_points": 3,
        "start": [0.0, -20.0, 60.0], "end": [1.0, -19.0, 61.0]}))
    rc = main(["follow-path", "--checkpoint", str(ckpt_path),
               "--config", str(two_system_cfg), "--path", str(path_spec),
               "--out", str(tmp_path / "bad")])
    captured = capsys.readouterr()
    assert rc != 0
    assert "13-dim" in captured.err and "14" in captured.err


# --------------------------------------------------------- binding surface
def _env_only_config(tmp_path):
    cfg = {
        "env": {
            "systems": ["system3"],
            "rotation_mode": "free",
            "joint_frame": "egocentric",
            "curriculum": {"kind": "constant", "initial": 1.0, "final": 1.0},
            "max_episode_steps": 20,
            "seed": 0,
        }
    }
    path = tmp_path / "env.json"
    path.write_text(json.dumps(cfg))
    return path


def test_trace_and_rpc_agree(tmp_path):
    cfg = _env_only_config(tmp_path)
    rng = np.random.default_rng(8)
    actions = rng.uniform(-0.3, 0.3, size=(10, 6)).tolist()
    script = tmp_path / "script.json"
    script.write_text(json.dumps({"seed": 42, "actions": actions}))

    trace_out = subprocess.run(
        [sys.executable, "-m", "ctrreach.cli", "trace", "--config", str(cfg),
         "--script", str(script)],
        capture_output=True, text=True, check=True)
    trace = json.loads(trace_out.stdout)

    proc = subprocess.Popen(
        [sys.executable, "-m", "ctrreach.cli", "env-rpc", "--config", str(cfg)],
        stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
    ops = [{"op": "spaces"}, {"op": "reset", "seed": 42}]
    ops += [{"op": "step", "action": a} for a in actions]
    ops += [{"op": "close"}]
    stdout, _ = proc.communicate("\n".join(json.dumps(o) for o in ops) + "\n",
                                 timeout=120)
    replies = [json.loads(l) for l in stdout.strip().splitlines()]
    assert replies[0]["observation_dim"] == 13
    assert replies[0]["action_dim"] == 6
    rpc_obs = [replies[1]["observation"]]
    rpc_rewards, rpc_terms = [], []
    for r in replies[2:-1]:
        rpc_obs.append(r["observation"])
        rpc_rewards.append(r["reward"])
        rpc_terms.append(r["terminated"])
    assert np.max(np.abs(np.array(rpc_obs) - np.array(trace["observations"]))) == 0.0
    assert rpc_rewards == trace["rewards"]
    assert rpc_terms == trace["terminals"]
    assert replies[-1] == {"ok": True}


def test_rpc_step_after_terminal_reports_error(tmp_path):
    cfg = _env_only_config(tmp_path)
    proc = subprocess.Popen(
        [sys.executable, "-m", "ctrreach.cli", "env-rpc", "--config", str(cfg)],
        stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
    zero = [0.0] * 6
    ops = [{"op": "reset", "seed": 1}]
    ops += [{"op": "step", "action": zero} for _ in range(21)]
    ops += [{"op": "close"}]
    stdout, _ = proc.communicate("\n".join(json.dumps(o) for o in ops) + "\n",
                                 timeout=120)
    replies = [json.loads(l) for l in stdout.strip().splitlines()]
    errors = [r for r in replies if "error" in r]
    assert errors and errors[0]["type"] == "EpisodeFinished"
