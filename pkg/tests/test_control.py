import numpy as np
import pytest

from ctrreach.control import (
    InvalidSpec,
    PathSpec,
    SingularUpdate,
    TrackingResult,
    damped_pseudoinverse_step,
    generate_path,
    jacobian_controller,
    policy_controller,
)
from ctrreach.env import EnvConfig, make_env
from ctrreach.kinematics import JointConfig, tip_position
from ctrreach.systems import reference_system

from conftest import zero_action_checkpoint


# ------------------------------------------------------------------- paths
def test_line_path():
    spec = PathSpec(kind="line", num_points=11,
                    params={"start": (0, 0, 0), "end": (0, 0, 10)})
    pts = generate_path(spec)
    assert pts.shape == (11, 3)
    assert pts[:, 2] == pytest.approx(np.arange(11.0))
    assert np.abs(pts[:, :2]).max() == 0.0


def test_circle_path():
    spec = PathSpec(kind="circle", num_points=36,
                    params={"center": (1, 2, 3), "radius": 7.5})
    pts = generate_path(spec)
    radii = np.linalg.norm(pts - np.array([1.0, 2.0, 3.0]), axis=1)
    assert radii == pytest.approx(np.full(36, 7.5))
    step = np.linalg.norm(pts[1] - pts[0])
    closing = np.linalg.norm(pts[0] - pts[-1])
    assert closing == pytest.approx(step, rel=1e-9)   # first ~ last + step


def test_helix_path():
    spec = PathSpec(kind="helix", num_points=50,
                    params={"center": (0, 0, 10), "radius": 5.0,
                            "pitch": 4.0, "turns": 2.0})
    pts = generate_path(spec)
    z = pts @ np.array([0.0, 0.0, 1.0])
    assert np.all(np.diff(z) > 0)
    assert z[-1] - z[0] == pytest.approx(8.0)         # 2 turns x pitch
    lateral = np.linalg.norm(pts[:, :2], axis=1)
    assert lateral == pytest.approx(np.full(50, 5.0))


def test_polygon_path():
    spec = PathSpec(kind="polygon", num_points=8,
                    params={"vertices": [(0, 0, 0), (4, 0, 0), (4, 4, 0),
                                         (0, 4, 0)]})
    pts = generate_path(spec)
    assert pts.shape == (8, 3)
    assert np.allclose(pts[0], (0, 0, 0))
    assert np.allclose(pts[2], (4, 0, 0))             # perimeter 16, step 2
    seg = np.linalg.norm(np.diff(np.vstack([pts, pts[:1]]), axis=0), axis=1)
    assert seg == pytest.approx(np.full(8, 2.0))


def test_invalid_specs():
    with pytest.raises(InvalidSpec):
        generate_path(PathSpec(kind="line", num_points=1,
                               params={"start": (0, 0, 0), "end": (1, 1, 1)}))
    with pytest.raises(InvalidSpec):
        generate_path(PathSpec(kind="blob", num_points=5, params={}))
    with pytest.raises(InvalidSpec):
        generate_path(PathSpec(kind="circle", num_points=5,
                               params={"center": (0, 0, 0), "radius": 2,
                                       "normal": (0, 0, 0)}))
    with pytest.raises(InvalidSpec):
        generate_path(PathSpec(kind="line", num_points=4,
                               params={"start": (0, 0, 0)}))


# -------------------------------------------------------- policy controller
def _env():
    return make_env(EnvConfig(systems=("system3",), seed=4,
                              max_episode_steps=25))


def test_policy_controller_immediate_waypoint():
    env = _env()
    ckpt = zero_action_checkpoint()
    q0 = JointConfig(alpha=(0.1, 0.2, 0.3), beta=(-40.0, -30.0, -20.0))
    tip = tip_position(env.systems[0], q0)
    actions, result, _ = policy_controller(env, ckpt, tip[None, :], q0)
    assert result.steps[0] <= 1
    assert result.errors[0] < 1e-9
    assert len(actions) == result.steps.sum()


def test_policy_controller_zero_length_path():
    env = _env()
    ckpt = zero_action_checkpoint()
    q0 = JointConfig(alpha=(0.1, 0.2, 0.3), beta=(-40.0, -30.0, -20.0))
    tip = tip_position(env.systems[0], q0)
    waypoints = np.repeat(tip[None, :], 5, axis=0)
    _, result, _ = policy_controller(env, ckpt, waypoints, q0)
    assert np.ptp(result.errors) < 1e-12
    assert result.errors[0] == pytest.approx(0.0, abs=1e-12)


def test_policy_controller_respects_step_budget():
    env = _env()
    ckpt = zero_action_checkpoint()
    q0 = JointConfig(alpha=(0.0, 0.0, 0.0), beta=(-40.0, -30.0, -20.0))
    far = np.array([[200.0, 200.0, 200.0]] * 3)       # unreachable
    _, result, _ = policy_controller(env, ckpt, far, q0,
                                     max_steps_per_goal=20)
    assert np.all(result.steps <= 20)
    assert np.all(result.steps == 20)                 # never reached, no retry


def test_policy_controller_persists_joints(tiny_checkpoint):
    _, ckpt, env_cfg = tiny_checkpoint
    env = make_env(env_cfg, seed=9)
    q0 = JointConfig(alpha=(0.0, 0.0, 0.0), beta=(-50.0, -40.0, -30.0))
    rng = np.random.default_rng(3)
    goals = tip_position(env.systems[0], q0) + rng.normal(0, 3.0, size=(4, 3))
    _, result, _ = policy_controller(env, ckpt, goals, q0)
    assert result.errors.shape == (4,)
    assert np.isfinite(result.errors).all()


# ------------------------------------------------------ jacobian controller
def test_dls_equals_inverse_when_square():
    rng = np.random.default_rng(0)
    J = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    twist = rng.normal(size=3)
    qdot = damped_pseudoinverse_step(J, twist, damping=0.0)
    assert np.allclose(qdot, np.linalg.solve(J, twist), atol=1e-10)


def test_dls_large_damping_shrinks_update():
    rng = np.random.default_rng(1)
    J = rng.normal(size=(3, 6))
    twist = rng.normal(size=3)
    norms = [np.linalg.norm(damped_pseudoinverse_step(J, twist, lam))
             for lam in (0.1, 1.0, 10.0, 100.0)]
    assert all(a > b for a, b in zip(norms[:-1], norms[1:]))
    assert norms[-1] < 1e-3 * norms[0]


def test_dls_singular_raises():
    with pytest.raises(SingularUpdate):
        damped_pseudoinverse_step(np.zeros((3, 6)), np.ones(3), 0.0)


def test_jacobian_controller_tracks_short_line():
    sys = reference_system(0)
    q0 = JointConfig(alpha=(0.2, -0.4, 0.8), beta=(-120.0, -90.0, -40.0))
    start_tip = tip_position(sys, q0)
    goal_tip = start_tip + np.array([-3.0, 2.0, 4.0])
    waypoints = np.linspace(start_tip, goal_tip, 6)
    result = jacobian_controller(sys, waypoints, q0, kp=2.0, damping=0.45)
    assert result.errors[-1] < 1.0
    assert result.mean_error < 2.0
    assert np.all(result.steps <= 50)


def test_jacobian_controller_saturates_at_limits():
    sys = reference_system(3)
    q0 = JointConfig(alpha=(0.0, 0.0, 0.0), beta=(-1.0, -0.5, -0.2))
    # ask for points beyond full extension: the law keeps pushing beta > 0
    tip = tip_position(sys, q0)
    waypoints = np.array([tip * 1.3 + np.array([0, 0, 30.0])])
    result = jacobian_controller(sys, waypoints, q0)
    assert result.saturated[0]


def test_tracking_result_csv_round_trip(tmp_path):
    res = TrackingResult(
        desired=np.array([[0.0, 0, 0], [1, 1, 1]]),
        achieved=np.array([[0.1, 0, 0], [1, 1, 0.5]]),
        errors=np.array([0.1, 0.5]),
        steps=np.array([3, 20]),
        saturated=np.array([False, True]),
    )
    path = tmp_path / "track.csv"
    res.to_csv(path, manifest_hash="deadbeef")
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "# manifest: deadbeef"
    assert len(lines) == 4                      # comment + header + 2 rows
    assert res.mean_error == pytest.approx(0.3)
