"""Goal-conditioned deterministic policy-gradient training with hindsight
replay, batched on the from-scratch dense nets.

The loop is deliberately single-threaded: one environment collects
experience, complete episodes are relabeled into the ring buffer, and a
block of critic/actor updates runs at each episode boundary. With a fixed
seed the whole run (and its log) is bit-reproducible on one machine.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..env import CtrReachEnv, Transition
from .nets import Adam, DimensionMismatch, MlpNet
from .replay import ReplayBuffer


@dataclass(frozen=True)
class ExplorationNoise:
    """Independent exploration channels for rotation and extension actions."""

    rotation_std_rad: float = math.radians(2.0)
    extension_std_mm: float = 0.5
    random_action_prob: float = 0.2

    def __post_init__(self):
        if self.rotation_std_rad < 0 or self.extension_std_mm < 0:
            raise ValueError("noise stds must be >= 0")
        if not (0.0 <= self.random_action_prob <= 1.0):
            raise ValueError("random_action_prob must be in [0, 1]")


@dataclass
class TrainConfig:
    total_timesteps: int = 3_000_000
    batch_size: int = 256
    discount: float = 0.95
    target_smoothing: float = 0.005
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    her_k: int = 4
    buffer_capacity: int = 500_000
    exploration: ExplorationNoise = field(default_factory=ExplorationNoise)
    updates_per_step: float = 0.5
    warmup_steps: int = 1_000
    eval_every: int = 10_000
    eval_episodes: int = 25
    hidden_sizes: tuple[int, ...] = (256, 256, 256)
    dtype: str = "float32"
    clip_targets: bool = True
    normalize_obs: bool = True
    success_threshold_mm: float = 1.0
    seed: int = 0

    @staticmethod
    def from_dict(data: dict) -> "TrainConfig":
        kwargs = dict(data)
        if "exploration" in kwargs and kwargs["exploration"] is not None:
            kwargs["exploration"] = ExplorationNoise(**kwargs["exploration"])
        if "hidden_sizes" in kwargs:
            kwargs["hidden_sizes"] = tuple(kwargs["hidden_sizes"])
        return TrainConfig(**kwargs)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden_sizes"] = list(self.hidden_sizes)
        return out


class Normalizer:
    """Running mean/std over observations; frozen once training stops."""

    def __init__(self, dim: int, clip: float = 5.0):
        self.dim = dim
        self.clip = clip
        self.count = 0.0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def update(self, x: np.ndarray) -> None:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        for row in x:
            self.count += 1.0
            delta = row - self.mean
            self.mean += delta / self.count
            self.m2 += delta * (row - self.mean)

    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        return np.sqrt(np.maximum(self.m2 / self.count, 1e-8))

    def normalize(self, x: np.ndarray) -> np.ndarray:
        if self.count < 2:
            return np.asarray(x, dtype=float)
        z = (np.asarray(x, dtype=float) - self.mean) / self.std()
        return np.clip(z, -self.clip, self.clip)

    def to_arrays(self) -> dict:
        return {"count": np.array([self.count]), "mean": self.mean, "m2": self.m2}

    @staticmethod
    def from_arrays(data: dict) -> "Normalizer":
        n = Normalizer(dim=data["mean"].size)
        n.count = float(data["count"][0])
        n.mean = data["mean"].astype(float)
        n.m2 = data["m2"].astype(float)
        return n


CHECKPOINT_VERSION = 1


@dataclass
class PolicyCheckpoint:
    """Actor/critic parameters plus everything needed to act reproducibly."""

    actor: MlpNet
    critic: MlpNet
    normalizer: Normalizer
    action_limits: np.ndarray
    env_config: dict
    train_config: dict
    config_hash: str
    rng_state: dict
    version: int = CHECKPOINT_VERSION

    @property
    def observation_dim(self) -> int:
        return self.actor.input_dim

    def save(self, path) -> None:
        meta = {
            "version": self.version,
            "actor": self.actor.to_dict(),
            "critic": self.critic.to_dict(),
            "env_config": self.env_config,
            "train_config": self.train_config,
            "config_hash": self.config_hash,
            "rng_state": self.rng_state,
        }
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(
            path,
            meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
            actor_params=self.actor.params,
            critic_params=self.critic.params,
            action_limits=self.action_limits,
            **{f"norm_{k}": v for k, v in self.normalizer.to_arrays().items()},
        )

    @staticmethod
    def load(path) -> "PolicyCheckpoint":
        with np.load(Path(path), allow_pickle=False) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            actor = MlpNet.from_dict(meta["actor"], data["actor_params"])
            critic = MlpNet.from_dict(meta["critic"], data["critic_params"])
            normalizer = Normalizer.from_arrays(
                {k[5:]: data[k] for k in data.files if k.startswith("norm_")})
            return PolicyCheckpoint(
                actor=actor,
                critic=critic,
                normalizer=normalizer,
                action_limits=data["action_limits"].astype(float),
                env_config=meta["env_config"],
                train_config=meta["train_config"],
                config_hash=meta["config_hash"],
                rng_state=meta["rng_state"],
                version=meta["version"],
            )


def config_hash(env_config: dict, train_config: dict) -> str:
    blob = json.dumps({"env": env_config, "train": train_config},
                      sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def act(
    checkpoint: PolicyCheckpoint,
    state: np.ndarray,
    deterministic: bool = True,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[ExplorationNoise] = None,
) -> np.ndarray:
    """Policy action for one observation; stochastic mode needs an rng."""
    state = np.asarray(state, dtype=float).reshape(-1)
    if state.size != checkpoint.observation_dim:
        raise DimensionMismatch(
            f"checkpoint expects observation dim {checkpoint.observation_dim}, "
            f"got {state.size}")
    obs = checkpoint.normalizer.normalize(state)
    action = np.asarray(checkpoint.actor.forward(obs), dtype=float)
    if deterministic:
        return action
    if rng is None:
        raise ValueError("stochastic act() needs an rng")
    if noise is None:
        spec = (checkpoint.train_config or {}).get("exploration") or {}
        noise = ExplorationNoise(**spec)
    return _noisy_action(action, checkpoint.action_limits, noise, rng)


def _noisy_action(
    action: np.ndarray,
    limits: np.ndarray,
    noise: ExplorationNoise,
    rng: np.random.Generator,
) -> np.ndarray:
    if rng.random() < noise.random_action_prob:
        return rng.uniform(-limits, limits)
    jitter = np.concatenate([
        rng.normal(0.0, noise.extension_std_mm, 3),
        rng.normal(0.0, noise.rotation_std_rad, 3),
    ])
    return np.clip(action + jitter, -limits, limits)


@dataclass
class LogRow:
    timestep: int
    mean_episode_reward: float
    success_rate: float
    tolerance: float
    actor_loss: float
    critic_loss: float

    HEADER = "timestep,mean_episode_reward,success_rate,tolerance,actor_loss,critic_loss"

    def as_csv(self) -> str:
        return (f"{self.timestep},{self.mean_episode_reward:.6f},"
                f"{self.success_rate:.6f},{self.tolerance:.6f},"
                f"{self.actor_loss:.8f},{self.critic_loss:.8f}")


class _Agent:
    """Actor/critic pair with targets; one gradient update per call."""

    def __init__(self, obs_dim: int, limits: np.ndarray, cfg: TrainConfig,
                 rng: np.random.Generator):
        dtype = np.dtype(cfg.dtype)
        sizes_a = (obs_dim, *cfg.hidden_sizes, 6)
        sizes_c = (obs_dim + 6, *cfg.hidden_sizes, 1)
        self.limits = limits
        self.cfg = cfg
        self.actor = MlpNet(sizes_a, output_activation="tanh",
                            output_scale=limits, rng=rng, dtype=dtype)
        self.critic = MlpNet(sizes_c, rng=rng, dtype=dtype)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.opt_actor = Adam(self.actor.n_params, cfg.actor_lr, dtype=dtype)
        self.opt_critic = Adam(self.critic.n_params, cfg.critic_lr, dtype=dtype)
        self._soft_a = np.empty_like(self.actor.params)
        self._soft_c = np.empty_like(self.critic.params)

    def update(self, batch: dict, normalizer: Normalizer) -> tuple[float, float]:
        cfg = self.cfg
        s = normalizer.normalize(batch["obs"])
        s2 = normalizer.normalize(batch["next_obs"])
        a = batch["actions"] / self.limits
        r = batch["rewards"].astype(float)
        done = batch["terminals"].astype(float)

        a2 = self.target_actor.forward(s2) / self.limits
        q2 = self.target_critic.forward(np.concatenate([s2, a2], axis=1))[:, 0]
        y = r + cfg.discount * (1.0 - done) * q2
        if cfg.clip_targets:
            y = np.clip(y, -1.0 / (1.0 - cfg.discount), 0.0)

        q, cache_c = self.critic.forward(
            np.concatenate([s, a], axis=1), want_cache=True)
        err = q[:, 0] - y
        critic_loss = float(np.mean(err * err))
        grad_q = (2.0 / err.size) * err[:, None]
        grad_c, _ = self.critic.backward(cache_c, grad_q)
        self.opt_critic.step(self.critic.params, grad_c)

        a_pi, cache_a = self.actor.forward(s, want_cache=True)
        q_pi, cache_c2 = self.critic.forward(
            np.concatenate([s, a_pi / self.limits], axis=1), want_cache=True)
        actor_loss = float(-np.mean(q_pi))
        grad_qpi = np.full((q_pi.shape[0], 1), -1.0 / q_pi.shape[0],
                           dtype=q_pi.dtype)
        _, grad_in = self.critic.backward(cache_c2, grad_qpi)
        grad_a = grad_in[:, s.shape[1]:] / self.limits
        grad_actor, _ = self.actor.backward(cache_a, grad_a)
        self.opt_actor.step(self.actor.params, grad_actor)

        tau = cfg.target_smoothing
        np.subtract(self.actor.params, self.target_actor.params, out=self._soft_a)
        self._soft_a *= tau
        self.target_actor.params += self._soft_a
        np.subtract(self.critic.params, self.target_critic.params, out=self._soft_c)
        self._soft_c *= tau
        self.target_critic.params += self._soft_c

        if not (math.isfinite(critic_loss) and math.isfinite(actor_loss)):
            raise RuntimeError(
                f"non-finite losses (critic={critic_loss}, actor={actor_loss}); "
                "training aborted")
        return actor_loss, critic_loss

    def assert_finite(self) -> None:
        for name, net in (("actor", self.actor), ("critic", self.critic)):
            if not np.isfinite(net.params).all():
                raise RuntimeError(f"{name} parameters became non-finite")


def evaluate_policy(
    env: CtrReachEnv,
    actor: MlpNet,
    normalizer: Normalizer,
    episodes: int,
    success_threshold: float,
) -> tuple[float, float]:
    """Deterministic rollouts; returns (success rate, mean final error)."""
    errors = []
    for _ in range(episodes):
        obs = env.reset()
        info = env.current_info()
        while True:
            action = np.asarray(actor.forward(normalizer.normalize(obs)),
                                dtype=float)
            obs, _, terminal, info = env.step(action)
            if terminal:
                break
        errors.append(info["error"])
    errors = np.array(errors)
    return float(np.mean(errors < success_threshold)), float(errors.mean())


def train(
    env_factory: Callable[[int], CtrReachEnv],
    cfg: TrainConfig,
    log_path: Optional[Path] = None,
    progress: Optional[Callable[[LogRow], None]] = None,
    log_manifest: Optional[str] = None,
) -> tuple[PolicyCheckpoint, list[LogRow]]:
    """Run the full training loop; returns the checkpoint and the log rows."""
    env = env_factory(cfg.seed)
    eval_env = env_factory(cfg.seed + 100_003)
    eval_env.freeze_tolerance_final()
    curriculum = env.config.curriculum
    if curriculum.kind != "constant" and curriculum.timesteps > cfg.total_timesteps:
        raise ValueError(
            f"curriculum timesteps ({curriculum.timesteps}) exceed "
            f"total timesteps ({cfg.total_timesteps})")

    rng = np.random.default_rng(cfg.seed)
    limits = env.action_limits()
    agent = _Agent(env.observation_dim, limits, cfg, rng)
    buffer = ReplayBuffer(cfg.buffer_capacity, env.observation_dim, 6,
                          dtype=np.dtype(cfg.dtype))
    normalizer = Normalizer(env.observation_dim)

    logs: list[LogRow] = []
    log_file = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_file = log_path.open("w")
        if log_manifest:
            log_file.write(f"# manifest: {log_manifest}\n")
        log_file.write(LogRow.HEADER + "\n")

    obs = env.reset()
    if cfg.normalize_obs:
        normalizer.update(obs)
    episode: list[Transition] = []
    episode_rewards: list[float] = []
    reward_acc = 0.0
    pending_updates = 0.0
    loss_acc = np.zeros(2)
    loss_n = 0

    for t in range(1, cfg.total_timesteps + 1):
        if t <= cfg.warmup_steps:
            action = rng.uniform(-limits, limits)
        else:
            raw = np.asarray(
                agent.actor.forward(normalizer.normalize(obs)), dtype=float)
            action = _noisy_action(raw, limits, cfg.exploration, rng)
        next_obs, reward, terminal, info = env.step(action)
        episode.append(Transition(
            state=np.asarray(obs, dtype=float),
            action=action,
            reward=reward,
            next_state=np.asarray(next_obs, dtype=float),
            achieved_goal=info["achieved_goal"],
            desired_goal=info["desired_goal"],
            tolerance=info["tolerance"],
            terminal=info["success"],
        ))
        reward_acc += reward
        if cfg.normalize_obs:
            normalizer.update(next_obs)
        obs = next_obs

        if terminal:
            buffer.add_episode(episode, cfg.her_k, rng)
            pending_updates += len(episode) * cfg.updates_per_step
            episode_rewards.append(reward_acc)
            episode = []
            reward_acc = 0.0
            if t > cfg.warmup_steps and len(buffer) >= cfg.batch_size:
                n_updates = int(pending_updates)
                pending_updates -= n_updates
                for _ in range(n_updates):
                    a_loss, c_loss = agent.update(
                        buffer.sample(cfg.batch_size, rng), normalizer)
                    loss_acc += (a_loss, c_loss)
                    loss_n += 1
            obs = env.reset()
            if cfg.normalize_obs:
                normalizer.update(obs)

        if t % cfg.eval_every == 0 or t == cfg.total_timesteps:
            agent.assert_finite()
            success, _ = evaluate_policy(
                eval_env, agent.actor, normalizer,
                cfg.eval_episodes, cfg.success_threshold_mm)
            recent = episode_rewards[-20:]
            row = LogRow(
                timestep=t,
                mean_episode_reward=float(np.mean(recent)) if recent else 0.0,
                success_rate=success,
                tolerance=env.current_tolerance(),
                actor_loss=float(loss_acc[0] / loss_n) if loss_n else 0.0,
                critic_loss=float(loss_acc[1] / loss_n) if loss_n else 0.0,
            )
            logs.append(row)
            loss_acc[:] = 0.0
            loss_n = 0
            if log_file is not None:
                log_file.write(row.as_csv() + "\n")
                log_file.flush()
            if progress is not None:
                progress(row)

    if log_file is not None:
        log_file.close()

    env_cfg_dict = env.config.to_dict()
    train_cfg_dict = cfg.to_dict()
    checkpoint = PolicyCheckpoint(
        actor=agent.actor,
        critic=agent.critic,
        normalizer=normalizer,
        action_limits=limits,
        env_config=env_cfg_dict,
        train_config=train_cfg_dict,
        config_hash=config_hash(env_cfg_dict, train_cfg_dict),
        rng_state=json.loads(json.dumps(rng.bit_generator.state)),
    )
    return checkpoint, logs
