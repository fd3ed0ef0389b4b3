"""Inverse-kinematics evaluation batteries, error regression, and workspace
error exports.

Each episode resets its own seeded environment (seed + episode index), runs
the deterministic policy at the final goal tolerance, and records the
noiseless ground-truth error, so reports are reproducible and episodes can
be distributed across workers and merged by index.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .env import EnvConfig, make_env
from .rl.ddpg import PolicyCheckpoint, act
from .systems import CtrSystem


class DegenerateFit(ValueError):
    """Regression input has no spread in the independent variable."""


SUCCESS_THRESHOLD_MM = 1.0


@dataclass
class EpisodeRecord:
    start_joints: np.ndarray      # (6,) beta then alpha
    final_joints: np.ndarray      # (6,)
    desired_goal: np.ndarray      # (3,)
    achieved_goal: np.ndarray     # (3,) final, ground truth
    error: float
    steps: int
    initial_distance: float
    system_index: int


@dataclass
class IkEvalReport:
    episodes: list[EpisodeRecord]
    seed: int
    max_steps: int
    config_hash: str = ""

    @property
    def errors(self) -> np.ndarray:
        return np.array([e.error for e in self.episodes])

    @property
    def initial_distances(self) -> np.ndarray:
        return np.array([e.initial_distance for e in self.episodes])

    @property
    def mean_error(self) -> float:
        return float(self.errors.mean())

    @property
    def std_error(self) -> float:
        return float(self.errors.std())

    @property
    def success_rate(self) -> float:
        return float((self.errors < SUCCESS_THRESHOLD_MM).mean())

    def subset(self, system_index: int) -> "IkEvalReport":
        eps = [e for e in self.episodes if e.system_index == system_index]
        return IkEvalReport(eps, self.seed, self.max_steps, self.config_hash)

    def to_csv(self, path, manifest_hash: Optional[str] = None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as f:
            if manifest_hash:
                f.write(f"# manifest: {manifest_hash}\n")
            f.write(f"# seed: {self.seed} max_steps: {self.max_steps}\n")
            f.write("episode,system,"
                    "start_b1,start_b2,start_b3,start_a1,start_a2,start_a3,"
                    "final_b1,final_b2,final_b3,final_a1,final_a2,final_a3,"
                    "desired_x,desired_y,desired_z,"
                    "achieved_x,achieved_y,achieved_z,"
                    "error,steps,initial_distance\n")
            for i, e in enumerate(self.episodes):
                cells = ([i, e.system_index]
                         + list(e.start_joints) + list(e.final_joints)
                         + list(e.desired_goal) + list(e.achieved_goal)
                         + [e.error, e.steps, e.initial_distance])
                f.write(",".join(_fmt(c) for c in cells) + "\n")


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.12g}"


def _run_episode(
    checkpoint: PolicyCheckpoint,
    config: EnvConfig,
    systems: Optional[list[CtrSystem]],
    seed: int,
    max_steps: int,
) -> EpisodeRecord:
    env = make_env(config, seed=seed, systems=systems)
    env.freeze_tolerance_final()
    obs = env.reset()
    info = env.current_info()
    start = info["joints"].as_array()
    initial = info["error"]
    steps = 0
    for _ in range(max_steps):
        action = act(checkpoint, obs, deterministic=True)
        obs, _, terminal, info = env.step(action)
        steps += 1
        if terminal:
            break
    return EpisodeRecord(
        start_joints=start,
        final_joints=info["joints"].as_array(),
        desired_goal=info["desired_goal"],
        achieved_goal=info["achieved_goal"],
        error=info["error"],
        steps=steps,
        initial_distance=initial,
        system_index=info["system_index"],
    )


def _episode_batch(args) -> list[EpisodeRecord]:
    checkpoint, config, seeds, max_steps = args
    return [_run_episode(checkpoint, config, None, s, max_steps) for s in seeds]


def evaluate_ik(
    checkpoint: PolicyCheckpoint,
    env_config: EnvConfig,
    episodes: int = 1000,
    max_steps: int = 150,
    seed: int = 0,
    workers: int = 1,
) -> IkEvalReport:
    """Deterministic-policy reaching battery at the final goal tolerance.

    Episode i always runs under seed (seed + i) regardless of worker count,
    so results are identical for any parallelism level.
    """
    seeds = [seed + i for i in range(episodes)]
    if workers <= 1:
        from .systems import load_systems
        registry = load_systems(env_config.systems)
        records = [
            _run_episode(checkpoint, env_config, registry, s, max_steps)
            for s in seeds
        ]
    else:
        chunks = np.array_split(seeds, workers)
        args = [(checkpoint, env_config, list(c), max_steps) for c in chunks if len(c)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_episode_batch, args))
        records = [r for part in parts for r in part]
    from .rl.ddpg import config_hash
    return IkEvalReport(
        episodes=records,
        seed=seed,
        max_steps=max_steps,
        config_hash=config_hash(env_config.to_dict(), {"episodes": episodes}),
    )


@dataclass(frozen=True)
class ErrorRegression:
    """Least-squares line of final error versus initial goal distance."""

    slope: float       # mm of final error per mm of initial distance
    intercept: float   # mm


def error_regression(report: IkEvalReport) -> ErrorRegression:
    x = report.initial_distances
    y = report.errors
    if x.size < 2:
        raise DegenerateFit("need at least two episodes")
    if float(np.ptp(x)) == 0.0:
        raise DegenerateFit("all initial distances are identical")
    slope, intercept = np.polyfit(x, y, 1)
    return ErrorRegression(slope=float(slope), intercept=float(intercept))


def percent_of_length(error_mm: float, sys: CtrSystem) -> float:
    """Error as a percentage of the overall robot length (innermost tube)."""
    if error_mm < 0:
        raise ValueError("error must be >= 0")
    return 100.0 * error_mm / sys.full_length


def export_workspace_errors(
    report: IkEvalReport,
    out_dir,
    threshold_mm: float = 2.0,
    manifest_hash: Optional[str] = None,
) -> dict[str, Path]:
    """Write workspace and per-tube rotation error tables.

    Produces workspace.csv (x, y, z, error per episode), a filtered copy with
    errors above the threshold, and rotation_errors.csv with one row per tube
    per episode (tube, rotation wrapped to [-pi, pi], error) for polar plots.
    """
    if not report.episodes:
        raise ValueError("report has no episodes")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "workspace": out_dir / "workspace.csv",
        "filtered": out_dir / f"workspace_above_{threshold_mm:g}mm.csv",
        "rotations": out_dir / "rotation_errors.csv",
    }
    header = "x,y,z,error\n"
    with paths["workspace"].open("w") as full, paths["filtered"].open("w") as filt:
        for f in (full, filt):
            if manifest_hash:
                f.write(f"# manifest: {manifest_hash}\n")
            f.write(header)
        for e in report.episodes:
            row = (f"{e.achieved_goal[0]:.9g},{e.achieved_goal[1]:.9g},"
                   f"{e.achieved_goal[2]:.9g},{e.error:.9g}\n")
            full.write(row)
            if e.error > threshold_mm:
                filt.write(row)
    with paths["rotations"].open("w") as f:
        if manifest_hash:
            f.write(f"# manifest: {manifest_hash}\n")
        f.write("tube,rotation_rad,error\n")
        for e in report.episodes:
            for tube in range(3):
                a = _wrap_pi(float(e.final_joints[3 + tube]))
                f.write(f"{tube + 1},{a:.9g},{e.error:.9g}\n")
    return paths


def _wrap_pi(angle: float) -> float:
    return math.atan2(math.sin(angle), math.cos(angle))


def render_workspace_plots(report: IkEvalReport, out_dir,
                           threshold_mm: float = 2.0) -> dict[str, Path]:
    """Scatter and polar images of the workspace error distribution."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    goals = np.array([e.achieved_goal for e in report.episodes])
    errors = report.errors

    fig = plt.figure(figsize=(11, 5))
    ax = fig.add_subplot(121, projection="3d")
    sc = ax.scatter(goals[:, 0], goals[:, 1], goals[:, 2], c=errors,
                    cmap="viridis", s=6)
    fig.colorbar(sc, ax=ax, label="error (mm)")
    ax.set_title("achieved goals")
    ax2 = fig.add_subplot(122, projection="3d")
    mask = errors > threshold_mm
    if mask.any():
        ax2.scatter(goals[mask, 0], goals[mask, 1], goals[mask, 2],
                    c=errors[mask], cmap="inferno", s=10)
    ax2.set_title(f"errors > {threshold_mm:g} mm ({int(mask.sum())})")
    workspace_png = out_dir / "workspace_errors.png"
    fig.tight_layout()
    fig.savefig(workspace_png, dpi=120)
    plt.close(fig)

    fig, axes = plt.subplots(1, 3, figsize=(13, 4),
                             subplot_kw={"projection": "polar"})
    finals = np.array([e.final_joints for e in report.episodes])
    for tube in range(3):
        ang = np.array([_wrap_pi(a) for a in finals[:, 3 + tube]])
        axes[tube].scatter(ang, errors, c=errors, cmap="viridis", s=5)
        axes[tube].set_title(f"tube {tube + 1} rotation vs error")
    polar_png = out_dir / "rotation_errors.png"
    fig.tight_layout()
    fig.savefig(polar_png, dpi=120)
    plt.close(fig)
    return {"workspace": workspace_png, "rotations": polar_png}
