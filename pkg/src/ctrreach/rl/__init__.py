from .nets import Adam, DimensionMismatch, MlpNet
from .replay import ReplayBuffer, her_relabel, relabeled_transition
from .ddpg import (
    ExplorationNoise,
    LogRow,
    Normalizer,
    PolicyCheckpoint,
    TrainConfig,
    act,
    config_hash,
    evaluate_policy,
    train,
)

__all__ = [
    "Adam",
    "DimensionMismatch",
    "MlpNet",
    "ReplayBuffer",
    "her_relabel",
    "relabeled_transition",
    "ExplorationNoise",
    "LogRow",
    "Normalizer",
    "PolicyCheckpoint",
    "TrainConfig",
    "act",
    "config_hash",
    "evaluate_policy",
    "train",
]
