import numpy as np
import pytest

import ctrreach.evaluation as evaluation
from ctrreach.env import CtrReachEnv, EnvConfig
from ctrreach.evaluation import (
    DegenerateFit,
    EpisodeRecord,
    IkEvalReport,
    error_regression,
    evaluate_ik,
    export_workspace_errors,
    percent_of_length,
)
from ctrreach.jointspace import sample_valid_joints
from ctrreach.systems import reference_system

from conftest import random_checkpoint, zero_action_checkpoint


def _make_report(errors, distances=None, seed=0):
    rng = np.random.default_rng(seed)
    episodes = []
    distances = distances if distances is not None else rng.uniform(5, 50, len(errors))
    for err, dist in zip(errors, distances):
        goal = rng.normal(size=3) * 20
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        episodes.append(EpisodeRecord(
            start_joints=rng.normal(size=6),
            final_joints=rng.normal(size=6),
            desired_goal=goal,
            achieved_goal=goal + err * direction,
            error=float(err),
            steps=int(rng.integers(1, 20)),
            initial_distance=float(dist),
            system_index=0,
        ))
    return IkEvalReport(episodes=episodes, seed=seed, max_steps=150)


# ------------------------------------------------------------ harness tests
class _GoalAtStartEnv(CtrReachEnv):
    """Cheating environment: the episode goal is the start configuration."""

    def reset(self, **kwargs):
        if "start" not in kwargs:
            q = sample_valid_joints(self.systems[0], self.rng,
                                    self.config.rotation_mode)
            kwargs["start"] = q
            kwargs["goal_joints"] = q
        return super().reset(**kwargs)


def test_perfect_policy_harness_self_test(monkeypatch):
    # goal == start and a do-nothing policy: the harness must report zero
    # error and success 1.0 (oracle self-test of the evaluation plumbing)
    def fake_make_env(config, seed=None, systems=None):
        cfg = config if isinstance(config, EnvConfig) else EnvConfig.from_dict(config)
        from dataclasses import replace
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        return _GoalAtStartEnv(cfg, systems=systems)

    monkeypatch.setattr(evaluation, "make_env", fake_make_env)
    ckpt = zero_action_checkpoint()
    report = evaluate_ik(ckpt, EnvConfig(systems=("system3",)), episodes=20,
                         max_steps=10, seed=3)
    assert report.mean_error == pytest.approx(0.0, abs=1e-12)
    assert report.success_rate == 1.0
    with pytest.raises(DegenerateFit):
        error_regression(report)          # all initial distances are zero


def test_random_policy_negative_control():
    ckpt = random_checkpoint(seed=1)
    report = evaluate_ik(ckpt, EnvConfig(systems=("system3",)), episodes=40,
                         max_steps=30, seed=11)
    assert report.success_rate < 0.2
    assert report.mean_error > 5.0


def test_evaluate_reproducible_and_worker_independent(tiny_checkpoint):
    _, ckpt, env_cfg = tiny_checkpoint
    r1 = evaluate_ik(ckpt, env_cfg, episodes=12, max_steps=10, seed=5)
    r2 = evaluate_ik(ckpt, env_cfg, episodes=12, max_steps=10, seed=5)
    assert np.array_equal(r1.errors, r2.errors)
    r4 = evaluate_ik(ckpt, env_cfg, episodes=12, max_steps=10, seed=5,
                     workers=3)
    assert np.array_equal(r1.errors, r4.errors)


def test_ground_truth_error_recomputable(tiny_checkpoint):
    from ctrreach.kinematics import JointConfig, tip_position
    _, ckpt, env_cfg = tiny_checkpoint
    report = evaluate_ik(ckpt, env_cfg, episodes=8, max_steps=10, seed=2)
    sys = reference_system(3)
    for e in report.episodes:
        tip = tip_position(sys, JointConfig.from_array(e.final_joints))
        assert np.allclose(tip, e.achieved_goal, atol=1e-9)
        assert e.error == pytest.approx(
            float(np.linalg.norm(tip - e.desired_goal)), abs=1e-9)


def test_csv_aggregates_match_report(tmp_path, tiny_checkpoint):
    _, ckpt, env_cfg = tiny_checkpoint
    report = evaluate_ik(ckpt, env_cfg, episodes=10, max_steps=10, seed=7)
    path = tmp_path / "report.csv"
    report.to_csv(path)
    rows = [line.split(",") for line in path.read_text().splitlines()
            if line and not line.startswith("#")][1:]
    errors = np.array([float(r[20]) for r in rows])
    assert len(rows) == 10
    assert errors.mean() == pytest.approx(report.mean_error, rel=1e-9)
    assert errors.std() == pytest.approx(report.std_error, rel=1e-9)
    assert (errors < 1.0).mean() == pytest.approx(report.success_rate)


# -------------------------------------------------------------- regression
def test_regression_proportional():
    dist = np.linspace(1, 60, 100)
    report = _make_report(0.5 * dist, dist)
    reg = error_regression(report)
    assert reg.slope == pytest.approx(0.5, abs=1e-9)
    assert reg.intercept == pytest.approx(0.0, abs=1e-9)


def test_regression_constant_error():
    dist = np.linspace(1, 60, 100)
    report = _make_report(np.full(100, 2.0), dist)
    reg = error_regression(report)
    assert reg.slope == pytest.approx(0.0, abs=1e-12)
    assert reg.intercept == pytest.approx(2.0, abs=1e-9)


def test_regression_degenerate():
    report = _make_report([1.0, 2.0], [5.0, 5.0])
    with pytest.raises(DegenerateFit):
        error_regression(report)
    with pytest.raises(DegenerateFit):
        error_regression(_make_report([1.0], [5.0]))


# ----------------------------------------------------------------- exports
def test_export_row_counts(tmp_path):
    report = _make_report(np.linspace(0.1, 5.0, 25))
    paths = export_workspace_errors(report, tmp_path)
    rows = [l for l in paths["workspace"].read_text().splitlines()[1:] if l]
    assert len(rows) == 25
    filt = [l for l in paths["filtered"].read_text().splitlines()[1:] if l]
    expected_above = int((report.errors > 2.0).sum())
    assert len(filt) == expected_above
    rot = [l for l in paths["rotations"].read_text().splitlines()[1:] if l]
    assert len(rot) == 3 * 25


def test_export_filtered_empty_when_all_below(tmp_path):
    report = _make_report(np.full(12, 0.5))
    paths = export_workspace_errors(report, tmp_path)
    filt = [l for l in paths["filtered"].read_text().splitlines()[1:] if l]
    assert filt == []


def test_export_single_episode(tmp_path):
    report = _make_report([1.5])
    paths = export_workspace_errors(report, tmp_path)
    rows = [l for l in paths["workspace"].read_text().splitlines()[1:] if l]
    assert len(rows) == 1


def test_render_plots(tmp_path):
    report = _make_report(np.linspace(0.2, 4.0, 30))
    paths = evaluation.render_workspace_plots(report, tmp_path)
    for p in paths.values():
        assert p.exists() and p.stat().st_size > 0


# --------------------------------------------------------------- percent
def test_percent_of_length():
    sys0 = reference_system(0)
    assert percent_of_length(0.0, sys0) == 0.0
    assert percent_of_length(431.0, sys0) == pytest.approx(100.0)
    # 0.68 mm on the 431 mm system is ~0.16% of robot length
    assert percent_of_length(0.68, sys0) == pytest.approx(0.1578, abs=5e-4)
    with pytest.raises(ValueError):
        percent_of_length(-1.0, sys0)
