"""Goal-conditioned reaching environment over the tube kinematics.

Observation layout (a flat float vector):

    [0:9]    trig representation of the joints, tube-major, in the
             configured joint frame (cos a1, sin a1, b1, cos a2, ...)
    [9:12]   achieved goal minus desired goal (mm)
    [12]     current goal tolerance (mm)
    [13:]    system feature, only in multi-system mode (scaled index by
             default, one-hot optionally)

Reward is sparse: 0 when the (noiseless) tip error is within the scheduled
tolerance, else -1. Sensor noise, when enabled, perturbs only what the
observation reports; ground truth lives in the step info dict.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .jointspace import (
    ActionVector,
    JointFrame,
    RotationMode,
    apply_action,
    sample_valid_joints,
    to_egocentric,
    trig_of,
)
from .kinematics import JointConfig, KinematicsTier, tip_position
from .systems import (
    CtrSystem,
    DomainRandomizationSpec,
    load_systems,
    randomize,
)

TRIG_SLICE = slice(0, 9)
GOAL_DELTA_SLICE = slice(9, 12)
TOLERANCE_INDEX = 12
SYSTEM_FEATURE_START = 13


class EpisodeFinished(RuntimeError):
    """step() was called after the episode terminated."""


class SystemSampler(Enum):
    Uniform = "uniform"
    LengthProportional = "length"


@dataclass(frozen=True)
class Curriculum:
    """Goal-tolerance schedule over training timesteps (mm)."""

    kind: str = "decay"              # constant | linear | decay
    initial: float = 20.0
    final: float = 1.0
    timesteps: int = 1_500_000

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "decay"):
            raise ValueError(f"unknown curriculum kind {self.kind!r}")
        if self.final > self.initial:
            raise ValueError("final tolerance must not exceed initial")
        if self.kind != "constant" and (self.final <= 0 or self.initial <= 0):
            raise ValueError("tolerances must be positive")

    def tolerance(self, t: float) -> float:
        if self.kind == "constant":
            return self.final
        if t >= self.timesteps:
            return self.final
        if self.kind == "linear":
            a = (self.final - self.initial) / self.timesteps
            return max(self.final, a * t + self.initial)
        rate = 1.0 - (self.final / self.initial) ** (1.0 / self.timesteps)
        return max(self.final, self.initial * (1.0 - rate) ** t)


@dataclass(frozen=True)
class NoiseSpec:
    """Encoder and tracking noise standard deviations.

    The extension encoder noise follows from the rotation noise through the
    actuation gear ratio: the default is gear_ratio * (1 degree in rad) of
    leadscrew displacement, stored explicitly in extension_encoder_std_mm so
    the convention is visible and overridable.
    """

    rotation_encoder_std_deg: float = 1.0
    tracking_std_mm: float = 0.8
    gear_ratio: float = 0.001
    extension_encoder_std_mm: Optional[float] = None

    def __post_init__(self):
        if self.extension_encoder_std_mm is None:
            derived = self.gear_ratio * math.radians(self.rotation_encoder_std_deg)
            object.__setattr__(self, "extension_encoder_std_mm", derived)
        for name in ("rotation_encoder_std_deg", "tracking_std_mm",
                     "gear_ratio", "extension_encoder_std_mm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def rotation_encoder_std_rad(self) -> float:
        return math.radians(self.rotation_encoder_std_deg)


def observe_with_noise(
    q: JointConfig,
    achieved_goal: np.ndarray,
    spec: NoiseSpec,
    rng: np.random.Generator,
) -> tuple[JointConfig, np.ndarray]:
    """Zero-mean Gaussian noise on the reported joints and tracked tip.

    Draw order is fixed (3 rotations, 3 extensions, 3 tracking axes) so a
    seeded generator reproduces trajectories exactly.
    """
    alpha = tuple(a + rng.normal(0.0, spec.rotation_encoder_std_rad)
                  for a in q.alpha)
    beta = tuple(b + rng.normal(0.0, spec.extension_encoder_std_mm)
                 for b in q.beta)
    noisy_goal = achieved_goal + rng.normal(0.0, spec.tracking_std_mm, size=3)
    return JointConfig(alpha=alpha, beta=beta), noisy_goal


@dataclass
class Transition:
    """One stored step: reward is recomputable from the goals and tolerance."""

    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    achieved_goal: np.ndarray     # ground-truth tip after the action
    desired_goal: np.ndarray
    tolerance: float
    terminal: bool                # success terminal (not timeout)


def sample_system_index(
    systems: Sequence[CtrSystem],
    sampler: SystemSampler,
    rng: np.random.Generator,
) -> int:
    if sampler is SystemSampler.LengthProportional:
        lengths = np.array([s.full_length for s in systems])
        return int(rng.choice(len(systems), p=lengths / lengths.sum()))
    return int(rng.integers(len(systems)))


def build_observation(
    alpha: Sequence[float],
    beta: Sequence[float],
    achieved_goal: np.ndarray,
    desired_goal: np.ndarray,
    tolerance: float,
    frame: JointFrame,
    system_feature: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Pure observation assembly; identical inputs yield identical vectors."""
    if frame is JointFrame.Egocentric:
        alpha, beta = to_egocentric(alpha, beta)
    parts = [trig_of(alpha, beta),
             np.asarray(achieved_goal) - np.asarray(desired_goal),
             np.array([tolerance])]
    if system_feature is not None:
        parts.append(system_feature)
    return np.concatenate(parts)


@dataclass
class EnvConfig:
    """Everything needed to reconstruct an environment run-for-run."""

    systems: tuple[str, ...] = ("system0",)
    rotation_mode: RotationMode = RotationMode.ConstraintFree
    joint_frame: JointFrame = JointFrame.Egocentric
    curriculum: Curriculum = field(default_factory=Curriculum)
    noise: Optional[NoiseSpec] = None
    domain_randomization: Optional[DomainRandomizationSpec] = None
    sampler: SystemSampler = SystemSampler.Uniform
    max_episode_steps: int = 150
    tier: KinematicsTier = KinematicsTier.Rigid
    psi_encoding: str = "scaled"      # scaled | onehot
    noisy_reward: bool = False
    seed: int = 0

    @staticmethod
    def from_dict(data: dict) -> "EnvConfig":
        kwargs = dict(data)
        if "systems" in kwargs:
            kwargs["systems"] = tuple(kwargs["systems"])
        if "rotation_mode" in kwargs:
            kwargs["rotation_mode"] = RotationMode(kwargs["rotation_mode"])
        if "joint_frame" in kwargs:
            kwargs["joint_frame"] = JointFrame(kwargs["joint_frame"])
        if "sampler" in kwargs:
            kwargs["sampler"] = SystemSampler(kwargs["sampler"])
        if "tier" in kwargs:
            kwargs["tier"] = KinematicsTier(kwargs["tier"])
        if kwargs.get("curriculum") is not None:
            kwargs["curriculum"] = Curriculum(**kwargs["curriculum"])
        if kwargs.get("noise") is not None:
            kwargs["noise"] = NoiseSpec(**kwargs["noise"])
        if kwargs.get("domain_randomization") is not None:
            dr = dict(kwargs["domain_randomization"])
            if "parameters" in dr:
                dr["parameters"] = tuple(dr["parameters"])
            kwargs["domain_randomization"] = DomainRandomizationSpec(**dr)
        return EnvConfig(**kwargs)

    def to_dict(self) -> dict:
        out = {
            "systems": list(self.systems),
            "rotation_mode": self.rotation_mode.value,
            "joint_frame": self.joint_frame.value,
            "curriculum": {
                "kind": self.curriculum.kind,
                "initial": self.curriculum.initial,
                "final": self.curriculum.final,
                "timesteps": self.curriculum.timesteps,
            },
            "noise": None,
            "domain_randomization": None,
            "sampler": self.sampler.value,
            "max_episode_steps": self.max_episode_steps,
            "tier": self.tier.value,
            "psi_encoding": self.psi_encoding,
            "noisy_reward": self.noisy_reward,
            "seed": self.seed,
        }
        if self.noise is not None:
            out["noise"] = {
                "rotation_encoder_std_deg": self.noise.rotation_encoder_std_deg,
                "tracking_std_mm": self.noise.tracking_std_mm,
                "gear_ratio": self.noise.gear_ratio,
                "extension_encoder_std_mm": self.noise.extension_encoder_std_mm,
            }
        if self.domain_randomization is not None:
            out["domain_randomization"] = {
                "fraction": self.domain_randomization.fraction,
                "parameters": list(self.domain_randomization.parameters),
                "max_retries": self.domain_randomization.max_retries,
            }
        return out

    @staticmethod
    def from_file(path) -> "EnvConfig":
        data = json.loads(Path(path).read_text())
        if "env" in data:
            data = data["env"]
        return EnvConfig.from_dict(data)


class CtrReachEnv:
    """Single-threaded goal-conditioned environment instance."""

    def __init__(self, config: EnvConfig, systems: Optional[list[CtrSystem]] = None):
        self.config = config
        self.systems = systems if systems is not None else load_systems(config.systems)
        if not self.systems:
            raise ValueError("system registry is empty")
        self.rng = np.random.default_rng(config.seed)
        self.multi_system = len(self.systems) > 1
        self.training_timestep = 0
        self._tolerance_frozen = False
        self._system_index = 0
        self._active_system = self.systems[0]
        self._q: Optional[JointConfig] = None
        self._desired: Optional[np.ndarray] = None
        self._achieved: Optional[np.ndarray] = None
        self._steps = 0
        self._finished = True
        self._last_clamped = False
        self.record_episode = False
        self.episode_log: list[tuple] = []

    # ------------------------------------------------------------- spaces
    @property
    def action_dim(self) -> int:
        return 6

    @property
    def observation_dim(self) -> int:
        if not self.multi_system:
            return 13
        return 13 + (len(self.systems) if self.config.psi_encoding == "onehot" else 1)

    def action_limits(self) -> np.ndarray:
        from .jointspace import ACTION_LIMITS
        return ACTION_LIMITS.copy()

    # --------------------------------------------------------------- clock
    def set_training_timestep(self, t: int) -> None:
        self.training_timestep = int(t)

    def freeze_tolerance_final(self) -> None:
        """Pin the goal tolerance at its final value (evaluation mode)."""
        self._tolerance_frozen = True

    def current_tolerance(self) -> float:
        if self._tolerance_frozen:
            return self.config.curriculum.final
        return self.config.curriculum.tolerance(self.training_timestep)

    # --------------------------------------------------------------- reset
    def reset(
        self,
        *,
        seed: Optional[int] = None,
        start: Optional[JointConfig] = None,
        goal_position: Optional[np.ndarray] = None,
        goal_joints: Optional[JointConfig] = None,
        system_index: Optional[int] = None,
    ) -> np.ndarray:
        """Start a new episode; returns the initial observation.

        Draw order when sampling: system index, domain randomization,
        start joints, goal joints. Explicit arguments suppress the
        corresponding draws (used by the path-following controller, which
        persists joints and supplies its own goals).
        """
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        if system_index is not None:
            self._system_index = int(system_index)
        elif self.multi_system:
            self._system_index = sample_system_index(
                self.systems, self.config.sampler, self.rng)
        base = self.systems[self._system_index]
        self._active_system = base
        if self.config.domain_randomization is not None:
            self._active_system = randomize(
                base, self.config.domain_randomization, self.rng)
        self._q = start if start is not None else sample_valid_joints(
            self._active_system, self.rng, self.config.rotation_mode)
        if goal_position is not None:
            self._desired = np.asarray(goal_position, dtype=float).copy()
        else:
            gj = goal_joints if goal_joints is not None else sample_valid_joints(
                self._active_system, self.rng, self.config.rotation_mode)
            self._desired = tip_position(self._active_system, gj, self.config.tier)
        self._achieved = tip_position(self._active_system, self._q, self.config.tier)
        self._steps = 0
        self._finished = False
        self._last_clamped = False
        return self._observe()

    # ---------------------------------------------------------------- step
    def step(self, action) -> tuple[np.ndarray, float, bool, dict]:
        if self._finished:
            raise EpisodeFinished("environment must be reset before stepping")
        if not isinstance(action, ActionVector):
            arr = np.asarray(action, dtype=float).reshape(-1)
            if arr.size != 6:
                raise ValueError(f"expected a 6-dim action, got {arr.size}")
            action = ActionVector.from_array(arr)
        self._q, self._last_clamped = apply_action(
            self._q, action, self.config.rotation_mode, self._active_system)
        self._achieved = tip_position(self._active_system, self._q, self.config.tier)
        if not self._tolerance_frozen:
            self.training_timestep += 1
        tol = self.current_tolerance()
        error = float(np.linalg.norm(self._achieved - self._desired))
        obs = self._observe()
        if self.config.noisy_reward and self.config.noise is not None:
            reported = float(np.linalg.norm(obs[GOAL_DELTA_SLICE]))
            success = reported <= tol
        else:
            success = error <= tol
        reward = 0.0 if success else -1.0
        self._steps += 1
        timeout = self._steps >= self.config.max_episode_steps
        terminal = bool(success or timeout)
        self._finished = terminal
        info = {
            "error": error,
            "success": bool(success),
            "timeout": bool(timeout and not success),
            "achieved_goal": self._achieved.copy(),
            "desired_goal": self._desired.copy(),
            "joints": self._q,
            "clamped": self._last_clamped,
            "tolerance": tol,
            "system_index": self._system_index,
        }
        if self.record_episode:
            self.episode_log.append(
                (self._steps, *self._q.beta, *self._q.alpha,
                 *self._achieved, *self._desired, error, reward))
        return obs, reward, terminal, info

    # --------------------------------------------------------------- state
    def current_info(self) -> dict:
        """Ground truth for the current state (used after reset)."""
        return {
            "error": float(np.linalg.norm(self._achieved - self._desired)),
            "achieved_goal": self._achieved.copy(),
            "desired_goal": self._desired.copy(),
            "joints": self._q,
            "tolerance": self.current_tolerance(),
            "system_index": self._system_index,
        }

    def _system_feature(self) -> Optional[np.ndarray]:
        if not self.multi_system:
            return None
        n = len(self.systems)
        if self.config.psi_encoding == "onehot":
            feat = np.zeros(n)
            feat[self._system_index] = 1.0
            return feat
        return np.array([self._system_index / (n - 1)])

    def _observe(self) -> np.ndarray:
        q, achieved = self._q, self._achieved
        if self.config.noise is not None:
            q, achieved = observe_with_noise(q, achieved, self.config.noise, self.rng)
        return build_observation(
            q.alpha, q.beta, achieved, self._desired,
            self.current_tolerance(), self.config.joint_frame,
            self._system_feature())


EPISODE_LOG_HEADER = ("t,beta1,beta2,beta3,alpha1,alpha2,alpha3,"
                      "achieved_x,achieved_y,achieved_z,"
                      "desired_x,desired_y,desired_z,error,reward")


def write_episode_log(path, rows, manifest_hash: Optional[str] = None) -> None:
    """Dump recorded per-step rows (see CtrReachEnv.record_episode) as CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        if manifest_hash:
            f.write(f"# manifest: {manifest_hash}\n")
        f.write(EPISODE_LOG_HEADER + "\n")
        for row in rows:
            f.write(",".join(f"{v:.9g}" for v in row) + "\n")


def make_env(config_source, seed: Optional[int] = None,
             systems: Optional[list[CtrSystem]] = None) -> CtrReachEnv:
    """Build an environment from an EnvConfig, dict, or JSON file path."""
    if isinstance(config_source, EnvConfig):
        cfg = config_source
    elif isinstance(config_source, dict):
        data = config_source.get("env", config_source)
        cfg = EnvConfig.from_dict(data)
    else:
        cfg = EnvConfig.from_file(config_source)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return CtrReachEnv(cfg, systems=systems)
