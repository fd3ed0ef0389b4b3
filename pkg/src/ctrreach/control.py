"""Path generation and the two waypoint-tracking controllers.

The policy controller replays a trained reaching policy waypoint by
waypoint: each desired goal gets at most 20 policy steps, breaking early
once the tip is within tolerance, and the joint state carries over to the
next waypoint whether or not the goal was reached.

The Jacobian baseline iterates the damped-least-squares resolved-rate law
qdot = (J^T J + damping^2 I)^-1 J^T [xdot_ff + Kp (x_d - x)]. The law itself
is blind to the actuator limits; requested joints are only projected back
onto the feasible set afterwards, and each projection is recorded as a
saturation event (this is the baseline's characteristic failure mode near
the workspace boundary).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .env import CtrReachEnv
from .jointspace import feasible_beta_chain
from .kinematics import JointConfig, KinematicsTier, jacobian, tip_position
from .rl.ddpg import PolicyCheckpoint, act
from .systems import CtrSystem


class InvalidSpec(ValueError):
    """Path specification is malformed."""


class SingularUpdate(RuntimeError):
    """The undamped least-squares system was singular."""


@dataclass(frozen=True)
class PathSpec:
    """Waypoint generator parameters; all coordinates in mm.

    kinds: line (start, end), circle (center, radius, normal), helix
    (center, radius, pitch, turns, axis), polygon (vertices, closed loop).
    """

    kind: str
    num_points: int
    params: dict = field(default_factory=dict)

    @staticmethod
    def from_dict(data: dict) -> "PathSpec":
        d = dict(data)
        kind = d.pop("kind")
        n = int(d.pop("num_points"))
        return PathSpec(kind=kind, num_points=n, params=d)

    @staticmethod
    def from_file(path) -> "PathSpec":
        data = json.loads(Path(path).read_text())
        if "path" in data:
            data = data["path"]
        return PathSpec.from_dict(data)


def _plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.asarray(normal, dtype=float)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise InvalidSpec("normal/axis must be nonzero")
    n = n / norm
    helper = np.array([1.0, 0.0, 0.0])
    if abs(n @ helper) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


def generate_path(spec: PathSpec) -> np.ndarray:
    """Waypoints (num_points, 3) for the requested shape."""
    if spec.num_points < 2:
        raise InvalidSpec("num_points must be >= 2")
    n = spec.num_points
    p = spec.params
    try:
        if spec.kind == "line":
            start = np.asarray(p["start"], dtype=float)
            end = np.asarray(p["end"], dtype=float)
            ts = np.linspace(0.0, 1.0, n)[:, None]
            pts = start + ts * (end - start)
        elif spec.kind == "circle":
            center = np.asarray(p["center"], dtype=float)
            radius = float(p["radius"])
            e1, e2 = _plane_basis(p.get("normal", (0.0, 0.0, 1.0)))
            ang = 2.0 * math.pi * np.arange(n) / n
            pts = center + radius * (np.outer(np.cos(ang), e1)
                                     + np.outer(np.sin(ang), e2))
        elif spec.kind == "helix":
            center = np.asarray(p["center"], dtype=float)
            radius = float(p["radius"])
            pitch = float(p["pitch"])
            turns = float(p["turns"])
            axis = np.asarray(p.get("axis", (0.0, 0.0, 1.0)), dtype=float)
            axis = axis / np.linalg.norm(axis)
            e1, e2 = _plane_basis(axis)
            ang = np.linspace(0.0, 2.0 * math.pi * turns, n)
            rise = pitch * ang / (2.0 * math.pi)
            pts = (center + radius * (np.outer(np.cos(ang), e1)
                                      + np.outer(np.sin(ang), e2))
                   + np.outer(rise, axis))
        elif spec.kind == "polygon":
            verts = np.asarray(p["vertices"], dtype=float)
            if verts.ndim != 2 or verts.shape[0] < 2 or verts.shape[1] != 3:
                raise InvalidSpec("polygon needs >= 2 xyz vertices")
            loop = np.vstack([verts, verts[0]])
            seg = np.linalg.norm(np.diff(loop, axis=0), axis=1)
            cum = np.concatenate([[0.0], np.cumsum(seg)])
            total = cum[-1]
            if total == 0:
                raise InvalidSpec("polygon has zero perimeter")
            s_vals = total * np.arange(n) / n
            pts = np.empty((n, 3))
            for i, s in enumerate(s_vals):
                j = int(np.searchsorted(cum, s, side="right") - 1)
                j = min(j, len(seg) - 1)
                f = (s - cum[j]) / seg[j] if seg[j] > 0 else 0.0
                pts[i] = loop[j] + f * (loop[j + 1] - loop[j])
        else:
            raise InvalidSpec(f"unknown path kind {spec.kind!r}")
    except KeyError as missing:
        raise InvalidSpec(f"path spec missing parameter {missing}") from None
    if not np.isfinite(pts).all():
        raise InvalidSpec("path produced non-finite waypoints")
    return pts


@dataclass
class TrackingResult:
    """Per-waypoint outcome of a tracking run."""

    desired: np.ndarray          # (N, 3)
    achieved: np.ndarray         # (N, 3)
    errors: np.ndarray           # (N,)
    steps: np.ndarray            # (N,) steps spent on each waypoint
    saturated: np.ndarray        # (N,) bool: clamp/limit events seen

    @property
    def mean_error(self) -> float:
        return float(self.errors.mean())

    @property
    def std_error(self) -> float:
        return float(self.errors.std())

    def to_csv(self, path, manifest_hash: Optional[str] = None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as f:
            if manifest_hash:
                f.write(f"# manifest: {manifest_hash}\n")
            f.write("waypoint,desired_x,desired_y,desired_z,"
                    "achieved_x,achieved_y,achieved_z,error,steps,saturated\n")
            for i in range(self.errors.size):
                d, a = self.desired[i], self.achieved[i]
                f.write(f"{i},{d[0]:.9g},{d[1]:.9g},{d[2]:.9g},"
                        f"{a[0]:.9g},{a[1]:.9g},{a[2]:.9g},"
                        f"{self.errors[i]:.9g},{int(self.steps[i])},"
                        f"{int(self.saturated[i])}\n")


def policy_controller(
    env: CtrReachEnv,
    checkpoint: PolicyCheckpoint,
    waypoints: np.ndarray,
    q0: JointConfig,
    system_index: int = 0,
    max_steps_per_goal: int = 20,
    record_shapes: bool = False,
) -> tuple[list[np.ndarray], TrackingResult, list]:
    """Track waypoints with the trained policy (open-loop goal feed).

    Returns the emitted action sequence, the tracking result, and (when
    record_shapes is set) one backbone shape per waypoint for animation.
    """
    from .kinematics import forward_kinematics  # local: optional heavy path

    env.freeze_tolerance_final()
    waypoints = np.asarray(waypoints, dtype=float)
    n = waypoints.shape[0]
    actions: list[np.ndarray] = []
    achieved = np.zeros((n, 3))
    errors = np.zeros(n)
    steps_used = np.zeros(n, dtype=int)
    saturated = np.zeros(n, dtype=bool)
    shapes = []
    q = q0
    for i in range(n):
        obs = env.reset(start=q, goal_position=waypoints[i],
                        system_index=system_index)
        info = env.current_info()
        steps = 0
        clamp_seen = False
        for _ in range(max_steps_per_goal):
            action = act(checkpoint, obs, deterministic=True)
            obs, _, terminal, info = env.step(action)
            actions.append(action)
            steps += 1
            clamp_seen = clamp_seen or info["clamped"]
            q = info["joints"]
            if terminal:
                break
        achieved[i] = info["achieved_goal"]
        errors[i] = info["error"]
        steps_used[i] = steps
        saturated[i] = clamp_seen
        if record_shapes:
            shapes.append(forward_kinematics(
                env.systems[system_index], q, env.config.tier))
    result = TrackingResult(desired=waypoints.copy(), achieved=achieved,
                            errors=errors, steps=steps_used,
                            saturated=saturated)
    return actions, result, shapes


def damped_pseudoinverse_step(
    J: np.ndarray,
    twist: np.ndarray,
    damping: float,
) -> np.ndarray:
    """Solve (J^T J + damping^2 I) qdot = J^T twist."""
    A = J.T @ J + (damping**2) * np.eye(J.shape[1])
    try:
        return np.linalg.solve(A, J.T @ twist)
    except np.linalg.LinAlgError as exc:
        raise SingularUpdate(str(exc)) from None


def jacobian_controller(
    sys: CtrSystem,
    waypoints: np.ndarray,
    q0: JointConfig,
    kp: float = 2.0,
    damping: float = 0.45,
    dt: float = 0.1,
    iters_per_waypoint: int = 50,
    tier: KinematicsTier = KinematicsTier.Rigid,
    success_tol: float = 1.0,
) -> TrackingResult:
    """Damped-least-squares tracking of the waypoint list.

    The feedforward velocity aims at the next waypoint over the per-waypoint
    budget and is zero at the last one. Requested retractions outside the
    feasible set are projected back and flagged as saturation.
    """
    waypoints = np.asarray(waypoints, dtype=float)
    n = waypoints.shape[0]
    kp_mat = np.eye(3) * kp
    achieved = np.zeros((n, 3))
    errors = np.zeros(n)
    steps_used = np.zeros(n, dtype=int)
    saturated = np.zeros(n, dtype=bool)
    q = q0
    horizon = dt * iters_per_waypoint
    for i in range(n):
        target = waypoints[i]
        feedforward = ((waypoints[i + 1] - target) / horizon
                       if i + 1 < n else np.zeros(3))
        tip = tip_position(sys, q, tier)
        steps = 0
        for _ in range(iters_per_waypoint):
            err = target - tip
            if np.linalg.norm(err) <= success_tol:
                break
            J = jacobian(sys, q, tier)
            qdot = damped_pseudoinverse_step(J, feedforward + kp_mat @ err,
                                             damping)
            raw = q.as_array() + dt * qdot
            beta, clamped = feasible_beta_chain(sys, raw[:3])
            q = JointConfig(alpha=tuple(raw[3:]), beta=beta)
            saturated[i] = saturated[i] or clamped
            tip = tip_position(sys, q, tier)
            steps += 1
        achieved[i] = tip
        errors[i] = float(np.linalg.norm(target - tip))
        steps_used[i] = steps
    return TrackingResult(desired=waypoints.copy(), achieved=achieved,
                          errors=errors, steps=steps_used,
                          saturated=saturated)
