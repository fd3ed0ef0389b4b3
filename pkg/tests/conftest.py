import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ctrreach.env import Curriculum, EnvConfig, make_env
from ctrreach.jointspace import ACTION_LIMITS
from ctrreach.rl import MlpNet, Normalizer, PolicyCheckpoint, TrainConfig, train


def zero_action_checkpoint(obs_dim: int = 13,
                           env_config: dict | None = None) -> PolicyCheckpoint:
    """A checkpoint whose actor always outputs the zero action."""
    limits = ACTION_LIMITS.copy()
    actor = MlpNet((obs_dim, 8, 6), output_activation="tanh",
                   output_scale=limits)
    critic = MlpNet((obs_dim + 6, 8, 1))
    return PolicyCheckpoint(
        actor=actor, critic=critic, normalizer=Normalizer(obs_dim),
        action_limits=limits,
        env_config=env_config or {"systems": ["system3"]},
        train_config={}, config_hash="zero", rng_state={})


def random_checkpoint(obs_dim: int = 13, seed: int = 0) -> PolicyCheckpoint:
    rng = np.random.default_rng(seed)
    limits = ACTION_LIMITS.copy()
    actor = MlpNet((obs_dim, 16, 6), rng=rng, output_activation="tanh",
                   output_scale=limits)
    # blow up the (small-init) output layer so actions are genuinely random
    actor.params[:] = rng.normal(0, 0.8, actor.n_params)
    critic = MlpNet((obs_dim + 6, 16, 1), rng=rng)
    return PolicyCheckpoint(
        actor=actor, critic=critic, normalizer=Normalizer(obs_dim),
        action_limits=limits, env_config={"systems": ["system3"]},
        train_config={}, config_hash="random", rng_state={})


@pytest.fixture(scope="session")
def tiny_env_config() -> EnvConfig:
    return EnvConfig(
        systems=("system3",),
        curriculum=Curriculum(kind="decay", initial=20.0, final=1.0,
                              timesteps=1_500),
        max_episode_steps=30,
        seed=0,
    )


@pytest.fixture(scope="session")
def tiny_checkpoint(tiny_env_config, tmp_path_factory):
    """A briefly trained (not converged) checkpoint for plumbing tests."""

    def factory(seed):
        return make_env(tiny_env_config, seed=seed)

    cfg = TrainConfig(total_timesteps=3_000, warmup_steps=200,
                      eval_every=3_000, eval_episodes=2,
                      updates_per_step=0.2, buffer_capacity=20_000,
                      batch_size=64, seed=5)
    checkpoint, _ = train(factory, cfg)
    path = tmp_path_factory.mktemp("ckpt") / "tiny.npz"
    checkpoint.save(path)
    return path, checkpoint, tiny_env_config
