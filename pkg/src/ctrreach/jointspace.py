"""Joint representations, rotation-constraint modes, action application, and
valid joint sampling.

The trigonometric representation (cos a, sin a, b) per tube is well defined
for unbounded rotations, which is what makes constraint-free rotation
training possible; no operation here ever wraps or bounds an angle unless
the Constrained mode explicitly asks for it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .kinematics import JointConfig
from .systems import CtrSystem

# Per-step action limits: 1.0 mm extension change, 5 degrees rotation change.
EXTENSION_STEP_LIMIT_MM = 1.0
ROTATION_STEP_LIMIT_RAD = math.radians(5.0)

# (d_beta_1..3, d_alpha_1..3) componentwise bounds.
ACTION_LIMITS = np.array(
    [EXTENSION_STEP_LIMIT_MM] * 3 + [ROTATION_STEP_LIMIT_RAD] * 3
)


class RotationMode(Enum):
    Constrained = "constrained"      # rotations clipped to [-pi, pi]
    ConstraintFree = "free"          # rotations unbounded


class JointFrame(Enum):
    Proprioceptive = "proprioceptive"  # absolute, base-referenced joints
    Egocentric = "egocentric"          # adjacent-tube differences


@dataclass(frozen=True)
class TrigJointRep:
    """(cos a_i, sin a_i, b_i) triples, one row per tube."""

    values: np.ndarray  # shape (3, 3)

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


def to_trig(q: JointConfig) -> TrigJointRep:
    rows = [(math.cos(a), math.sin(a), b) for a, b in zip(q.alpha, q.beta)]
    return TrigJointRep(values=np.array(rows))


def trig_of(alpha: Sequence[float], beta: Sequence[float]) -> np.ndarray:
    """Flat 9-vector (cos a1, sin a1, b1, cos a2, ...) without bounds."""
    out = np.empty(9)
    for i in range(3):
        out[3 * i] = math.cos(alpha[i])
        out[3 * i + 1] = math.sin(alpha[i])
        out[3 * i + 2] = beta[i]
    return out


def rotation_from_trig(rep: TrigJointRep) -> tuple[float, float, float]:
    """Rotations recovered by the arc-tangent (principal value in [-pi, pi])."""
    return tuple(
        math.atan2(row[1], row[0]) for row in rep.values
    )


def joints_from_trig(rep: TrigJointRep) -> JointConfig:
    return JointConfig(
        alpha=rotation_from_trig(rep),
        beta=tuple(rep.values[:, 2]),
    )


def to_egocentric(alpha: Sequence[float], beta: Sequence[float]):
    """Adjacent differencing of both joint triples (no angle wrapping)."""
    a = (alpha[0], alpha[1] - alpha[0], alpha[2] - alpha[1])
    b = (beta[0], beta[1] - beta[0], beta[2] - beta[1])
    return a, b


def to_proprioceptive(alpha_ego: Sequence[float], beta_ego: Sequence[float]):
    """Cumulative summation; exact inverse of to_egocentric."""
    a = (alpha_ego[0],
         alpha_ego[1] + alpha_ego[0],
         alpha_ego[2] + alpha_ego[1] + alpha_ego[0])
    b = (beta_ego[0],
         beta_ego[1] + beta_ego[0],
         beta_ego[2] + beta_ego[1] + beta_ego[0])
    return a, b


@dataclass(frozen=True)
class ActionVector:
    """Per-step joint change (d_beta_1..3 mm, d_alpha_1..3 rad)."""

    delta_beta: tuple[float, float, float]
    delta_alpha: tuple[float, float, float]

    def as_array(self) -> np.ndarray:
        return np.array(self.delta_beta + self.delta_alpha, dtype=float)

    @staticmethod
    def from_array(v: Sequence[float]) -> "ActionVector":
        return ActionVector(delta_beta=(v[0], v[1], v[2]),
                            delta_alpha=(v[3], v[4], v[5]))

    def clipped(self) -> "ActionVector":
        v = np.clip(self.as_array(), -ACTION_LIMITS, ACTION_LIMITS)
        return ActionVector.from_array(v)


def feasible_beta_chain(sys: CtrSystem, raw_beta: Sequence[float]):
    """Project retractions onto the ordered-extension feasible set.

    Sequential clamping innermost first: each tube's interval follows from
    the already-fixed inner neighbours, so the result always satisfies the
    ordering constraints. Returns (beta, changed).
    """
    l1, l2, l3 = (t.length_total for t in sys.tubes)
    b1 = min(0.0, max(-l1, raw_beta[0]))
    b2 = min(min(0.0, l1 + b1 - l2), max(max(b1, -l2), raw_beta[1]))
    b3 = min(min(0.0, l2 + b2 - l3), max(max(b2, -l3), raw_beta[2]))
    beta = (b1, b2, b3)
    changed = any(abs(b - r) > 1e-12 for b, r in zip(beta, raw_beta))
    return beta, changed


def apply_action(
    q: JointConfig,
    a: ActionVector,
    mode: RotationMode,
    sys: CtrSystem,
) -> tuple[JointConfig, bool]:
    """Apply a (limit-clipped) action; infeasible requests are projected.

    Returns the new joints and a flag reporting whether any joint had to be
    clamped (retraction projection or, in Constrained mode, the rotation
    bound). Clipping the action to its own step limits does not set the flag.
    """
    a = a.clipped()
    raw_beta = tuple(b + db for b, db in zip(q.beta, a.delta_beta))
    beta, clamped = feasible_beta_chain(sys, raw_beta)
    alpha = tuple(al + da for al, da in zip(q.alpha, a.delta_alpha))
    if mode is RotationMode.Constrained:
        bounded = tuple(min(math.pi, max(-math.pi, al)) for al in alpha)
        clamped = clamped or any(abs(b - a_) > 1e-12 for b, a_ in zip(bounded, alpha))
        alpha = bounded
    return JointConfig(alpha=alpha, beta=beta), clamped


def sample_valid_joints(
    sys: CtrSystem,
    rng: np.random.Generator,
    mode: RotationMode = RotationMode.ConstraintFree,
) -> JointConfig:
    """Draw joints satisfying the extension constraints by construction.

    Retractions are drawn innermost first, each uniform over the interval its
    inner neighbours leave open (no rejection). Rotations are uniform over
    [-pi, pi]; one period covers every tip position in either rotation mode.
    """
    del mode  # sampling is identical in both modes
    l1, l2, l3 = (t.length_total for t in sys.tubes)
    b1 = rng.uniform(-l1, 0.0)
    b2 = rng.uniform(max(b1, -l2), min(0.0, l1 + b1 - l2))
    b3 = rng.uniform(max(b2, -l3), min(0.0, l2 + b2 - l3))
    alpha = tuple(rng.uniform(-math.pi, math.pi) for _ in range(3))
    return JointConfig(alpha=alpha, beta=(b1, b2, b3))
