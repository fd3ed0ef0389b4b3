"""Concentric tube robot reaching workbench: kinematics, goal-conditioned
training, and path-following controllers."""

__version__ = "0.1.0"

from .systems import (
    CtrSystem,
    DomainRandomizationSpec,
    TubeParams,
    bending_stiffness,
    load_system,
    randomize,
    reference_system,
    validate_system,
)
from .kinematics import (
    BackboneShape,
    InvalidJoints,
    JointConfig,
    KinematicsTier,
    Segment,
    ShootingNoConvergence,
    forward_kinematics,
    jacobian,
    segment_tubes,
    tip_position,
)
from .jointspace import (
    ActionVector,
    JointFrame,
    RotationMode,
    TrigJointRep,
    apply_action,
    rotation_from_trig,
    sample_valid_joints,
    to_egocentric,
    to_proprioceptive,
    to_trig,
)
from .env import (
    CtrReachEnv,
    Curriculum,
    EnvConfig,
    EpisodeFinished,
    NoiseSpec,
    SystemSampler,
    Transition,
    make_env,
    observe_with_noise,
)

__all__ = [
    "__version__",
    "CtrSystem",
    "DomainRandomizationSpec",
    "TubeParams",
    "bending_stiffness",
    "load_system",
    "randomize",
    "reference_system",
    "validate_system",
    "BackboneShape",
    "InvalidJoints",
    "JointConfig",
    "KinematicsTier",
    "Segment",
    "ShootingNoConvergence",
    "forward_kinematics",
    "jacobian",
    "segment_tubes",
    "tip_position",
    "ActionVector",
    "JointFrame",
    "RotationMode",
    "TrigJointRep",
    "apply_action",
    "rotation_from_trig",
    "sample_valid_joints",
    "to_egocentric",
    "to_proprioceptive",
    "to_trig",
    "CtrReachEnv",
    "Curriculum",
    "EnvConfig",
    "EpisodeFinished",
    "NoiseSpec",
    "SystemSampler",
    "Transition",
    "make_env",
    "observe_with_noise",
]
