"""Command-line entry point: train, evaluate, follow-path, compare-jacobian,
export-workspace, plus trace/env-rpc used by external bindings.

Every run writes a manifest.json (config hash, seed, version, outputs) into
its output directory, and the CSV outputs carry the manifest hash as a
leading comment line. All diagnostics go to stderr; stdout is reserved for
results and the RPC protocol.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .control import (
    PathSpec,
    generate_path,
    jacobian_controller,
    policy_controller,
)
from .env import CtrReachEnv, EnvConfig, EpisodeFinished, make_env
from .evaluation import (
    error_regression,
    evaluate_ik,
    export_workspace_errors,
    percent_of_length,
    render_workspace_plots,
    DegenerateFit,
)
from .kinematics import JointConfig
from .rl.ddpg import PolicyCheckpoint, TrainConfig, act, config_hash, train
from .systems import load_system
from .jointspace import sample_valid_joints


class IncompatibleCheckpoint(ValueError):
    """Checkpoint and environment disagree on the observation layout."""


def _err(msg: str) -> None:
    print(f"ctrreach: {msg}", file=sys.stderr)


def _check_compatible(checkpoint: PolicyCheckpoint, env: CtrReachEnv) -> None:
    if checkpoint.observation_dim != env.observation_dim:
        raise IncompatibleCheckpoint(
            f"checkpoint expects a {checkpoint.observation_dim}-dim observation "
            f"but the environment produces {env.observation_dim} "
            "(different system count or encoding)")


def _out_dir(arg: str) -> Path:
    root = os.environ.get("CTRREACH_OUT_ROOT")
    path = Path(arg)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    artifact_version: str
    created: str
    command: list[str]
    outputs: list[str] = field(default_factory=list)

    @staticmethod
    def create(cfg_hash: str, seed: int) -> "RunManifest":
        return RunManifest(
            config_hash=cfg_hash,
            seed=seed,
            artifact_version=__version__,
            created=_dt.datetime.now(_dt.timezone.utc).isoformat(),
            command=sys.argv,
        )

    def add(self, path: Path) -> Path:
        self.outputs.append(str(path))
        return path

    def write(self, out_dir: Path) -> None:
        (out_dir / "manifest.json").write_text(
            json.dumps(self.__dict__, indent=2) + "\n")


def _load_experiment(path: str) -> tuple[EnvConfig, TrainConfig]:
    data = json.loads(Path(path).read_text())
    env_cfg = EnvConfig.from_dict(data.get("env", data))
    train_cfg = TrainConfig.from_dict(data.get("train", {}))
    return env_cfg, train_cfg


# ----------------------------------------------------------------- train
def cmd_train(args) -> int:
    env_cfg, train_cfg = _load_experiment(args.config)
    if args.seed is not None:
        env_cfg = replace(env_cfg, seed=args.seed)
        train_cfg.seed = args.seed
    if args.timesteps is not None:
        train_cfg.total_timesteps = args.timesteps
        if env_cfg.curriculum.timesteps > args.timesteps:
            env_cfg = replace(env_cfg, curriculum=replace(
                env_cfg.curriculum, timesteps=args.timesteps))
    out = _out_dir(args.out)
    probe = make_env(env_cfg)
    _err(f"observation dim {probe.observation_dim}, action dim {probe.action_dim}")
    cfg_hash = config_hash(env_cfg.to_dict(), train_cfg.to_dict())
    manifest = RunManifest.create(cfg_hash, train_cfg.seed)

    def factory(seed: int) -> CtrReachEnv:
        return make_env(env_cfg, seed=seed)

    log_path = manifest.add(out / "training_log.csv")
    checkpoint, _ = train(
        factory, train_cfg, log_path=log_path, log_manifest=cfg_hash,
        progress=lambda row: _err(
            f"t={row.timestep} success={row.success_rate:.2f} "
            f"tol={row.tolerance:.2f}mm critic_loss={row.critic_loss:.4f}"))
    ckpt_path = manifest.add(out / "checkpoint.npz")
    checkpoint.save(ckpt_path)
    manifest.write(out)
    print(f"checkpoint: {ckpt_path}")
    return 0


# -------------------------------------------------------------- evaluate
def _eval_config(args, checkpoint: PolicyCheckpoint) -> EnvConfig:
    if args.config:
        env_cfg, _ = _load_experiment(args.config)
    else:
        env_cfg = EnvConfig.from_dict(checkpoint.env_config)
    return env_cfg


def cmd_evaluate(args) -> int:
    checkpoint = PolicyCheckpoint.load(args.checkpoint)
    env_cfg = _eval_config(args, checkpoint)
    _check_compatible(checkpoint, make_env(env_cfg))
    out = _out_dir(args.out)
    manifest = RunManifest.create(checkpoint.config_hash, args.seed)
    report = evaluate_ik(checkpoint, env_cfg, episodes=args.episodes,
                         max_steps=args.max_steps, seed=args.seed,
                         workers=args.workers)
    csv_path = manifest.add(out / "ik_eval.csv")
    report.to_csv(csv_path, manifest_hash=manifest.config_hash)
    manifest.write(out)
    sys_first = load_system(env_cfg.systems[0])
    print(f"episodes: {len(report.episodes)}")
    print(f"mean_error_mm: {report.mean_error:.6f}")
    print(f"std_error_mm: {report.std_error:.6f}")
    print(f"success_rate: {report.success_rate:.6f}")
    print(f"percent_of_length: {percent_of_length(report.mean_error, sys_first):.6f}")
    try:
        reg = error_regression(report)
        print(f"regression_slope: {reg.slope:.6f}")
        print(f"regression_intercept: {reg.intercept:.6f}")
    except DegenerateFit:
        _err("regression skipped: degenerate initial distances")
    return 0


def cmd_export_workspace(args) -> int:
    checkpoint = PolicyCheckpoint.load(args.checkpoint)
    env_cfg = _eval_config(args, checkpoint)
    _check_compatible(checkpoint, make_env(env_cfg))
    out = _out_dir(args.out)
    manifest = RunManifest.create(checkpoint.config_hash, args.seed)
    report = evaluate_ik(checkpoint, env_cfg, episodes=args.episodes,
                         max_steps=args.max_steps, seed=args.seed,
                         workers=args.workers)
    csv_path = manifest.add(out / "ik_eval.csv")
    report.to_csv(csv_path, manifest_hash=manifest.config_hash)
    paths = export_workspace_errors(report, out, threshold_mm=args.threshold,
                                    manifest_hash=manifest.config_hash)
    for p in paths.values():
        manifest.add(p)
    if args.plots:
        for p in render_workspace_plots(report, out,
                                        threshold_mm=args.threshold).values():
            manifest.add(p)
    manifest.write(out)
    above = sum(1 for e in report.episodes if e.error > args.threshold)
    print(f"episodes: {len(report.episodes)}")
    print(f"errors_above_{args.threshold:g}mm: {above}")
    return 0


# ------------------------------------------------------------ follow-path
def _start_joints(args, env: CtrReachEnv, system_index: int) -> JointConfig:
    if args.start:
        vals = [float(v) for v in args.start.split(",")]
        if len(vals) != 6:
            raise ValueError("--start needs 6 comma-separated values "
                             "(beta1,beta2,beta3,alpha1,alpha2,alpha3)")
        return JointConfig.from_array(np.array(vals))
    rng = np.random.default_rng(args.seed)
    return sample_valid_joints(env.systems[system_index], rng)


def cmd_follow(args) -> int:
    checkpoint = PolicyCheckpoint.load(args.checkpoint)
    env_cfg = _eval_config(args, checkpoint)
    if args.system:
        env_cfg = replace(env_cfg, systems=tuple(env_cfg.systems))
    if args.noise and env_cfg.noise is None:
        from .env import NoiseSpec
        env_cfg = replace(env_cfg, noise=NoiseSpec())
    env = make_env(env_cfg, seed=args.seed)
    _check_compatible(checkpoint, env)
    system_index = args.system_index
    spec = PathSpec.from_file(args.path)
    waypoints = generate_path(spec)
    out = _out_dir(args.out)
    manifest = RunManifest.create(checkpoint.config_hash, args.seed)
    q0 = _start_joints(args, env, system_index)
    env.record_episode = args.episode_logs
    if args.controller == "jacobian":
        result = jacobian_controller(
            env.systems[system_index], waypoints, q0,
            kp=args.kp, damping=args.damping, tier=env_cfg.tier)
        shapes = []
    else:
        _, result, shapes = policy_controller(
            env, checkpoint, waypoints, q0, system_index=system_index,
            max_steps_per_goal=args.steps_per_goal,
            record_shapes=args.shapes)
    csv_path = manifest.add(out / "tracking.csv")
    result.to_csv(csv_path, manifest_hash=manifest.config_hash)
    for i, shape in enumerate(shapes):
        shape_path = manifest.add(out / f"backbone_{i:04d}.csv")
        shape.to_csv(shape_path, manifest_hash=manifest.config_hash)
    if args.episode_logs and env.episode_log:
        from .env import write_episode_log
        log_path = manifest.add(out / "episode_log.csv")
        write_episode_log(log_path, env.episode_log,
                          manifest_hash=manifest.config_hash)
    manifest.write(out)
    print(f"waypoints: {result.errors.size}")
    print(f"mean_tracking_error_mm: {result.mean_error:.6f}")
    print(f"std_tracking_error_mm: {result.std_error:.6f}")
    print(f"saturation_events: {int(result.saturated.sum())}")
    return 0


def cmd_compare_jacobian(args) -> int:
    checkpoint = PolicyCheckpoint.load(args.checkpoint)
    env_cfg = _eval_config(args, checkpoint)
    env = make_env(env_cfg, seed=args.seed)
    _check_compatible(checkpoint, env)
    system_index = args.system_index
    spec = PathSpec.from_file(args.path)
    waypoints = generate_path(spec)
    out = _out_dir(args.out)
    manifest = RunManifest.create(checkpoint.config_hash, args.seed)
    q0 = _start_joints(args, env, system_index)
    _, policy_result, _ = policy_controller(
        env, checkpoint, waypoints, q0, system_index=system_index,
        max_steps_per_goal=args.steps_per_goal)
    jac_result = jacobian_controller(
        env.systems[system_index], waypoints, q0,
        kp=args.kp, damping=args.damping, tier=env_cfg.tier)
    p_csv = manifest.add(out / "tracking_policy.csv")
    policy_result.to_csv(p_csv, manifest_hash=manifest.config_hash)
    j_csv = manifest.add(out / "tracking_jacobian.csv")
    jac_result.to_csv(j_csv, manifest_hash=manifest.config_hash)
    summary = {
        "manifest": manifest.config_hash,
        "policy": {
            "mean_error_mm": policy_result.mean_error,
            "std_error_mm": policy_result.std_error,
            "saturation_events": int(policy_result.saturated.sum()),
        },
        "jacobian": {
            "mean_error_mm": jac_result.mean_error,
            "std_error_mm": jac_result.std_error,
            "saturation_events": int(jac_result.saturated.sum()),
        },
    }
    summary_path = manifest.add(out / "comparison.json")
    summary_path.write_text(json.dumps(summary, indent=2) + "\n")
    manifest.write(out)
    print(json.dumps(summary, indent=2))
    return 0


# ------------------------------------------------------- binding support
def _scripted_trace(env: CtrReachEnv, seed: int, actions: list) -> dict:
    observations = []
    rewards = []
    terminals = []
    obs = env.reset(seed=seed)
    observations.append(list(obs))
    for a in actions:
        obs, reward, terminal, _ = env.step(np.asarray(a, dtype=float))
        observations.append(list(obs))
        rewards.append(reward)
        terminals.append(bool(terminal))
        if terminal:
            break
    return {"observations": observations, "rewards": rewards,
            "terminals": terminals}


def cmd_trace(args) -> int:
    env = make_env(args.config)
    script = json.loads(Path(args.script).read_text())
    trace = _scripted_trace(env, int(script["seed"]), script["actions"])
    text = json.dumps(trace)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_env_rpc(args) -> int:
    """JSON-lines environment server on stdin/stdout (one env per process)."""
    env = make_env(args.config)
    checkpoint = PolicyCheckpoint.load(args.checkpoint) if args.checkpoint else None
    last_obs = None
    out = sys.stdout
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
            op = msg["op"]
            if op == "spaces":
                reply = {
                    "observation_dim": env.observation_dim,
                    "action_dim": env.action_dim,
                    "action_low": list(-env.action_limits()),
                    "action_high": list(env.action_limits()),
                }
            elif op == "reset":
                last_obs = env.reset(seed=msg.get("seed"))
                reply = {"observation": list(last_obs)}
            elif op == "step":
                obs, reward, terminal, info = env.step(
                    np.asarray(msg["action"], dtype=float))
                last_obs = obs
                reply = {
                    "observation": list(obs),
                    "reward": reward,
                    "terminated": bool(terminal),
                    "info": {
                        "error": info["error"],
                        "success": info["success"],
                        "timeout": info["timeout"],
                    },
                }
            elif op == "act":
                if checkpoint is None:
                    raise ValueError("no checkpoint loaded (--checkpoint)")
                if last_obs is None:
                    raise ValueError("reset before act")
                action = act(checkpoint, last_obs,
                             deterministic=msg.get("deterministic", True),
                             rng=np.random.default_rng(msg.get("seed", 0)))
                reply = {"action": list(action)}
            elif op == "close":
                out.write(json.dumps({"ok": True}) + "\n")
                out.flush()
                return 0
            else:
                raise ValueError(f"unknown op {op!r}")
        except EpisodeFinished as exc:
            reply = {"error": str(exc), "type": "EpisodeFinished"}
        except Exception as exc:  # surface native diagnostics to the binding
            reply = {"error": str(exc), "type": type(exc).__name__}
        out.write(json.dumps(reply) + "\n")
        out.flush()
    return 0


# ------------------------------------------------------------------ main
def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ctrreach",
        description="Concentric tube robot reaching: training, evaluation, "
                    "and path following.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a policy from an experiment config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--timesteps", type=int, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="run the reaching evaluation battery")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", default=None)
    e.add_argument("--episodes", type=int, default=1000)
    e.add_argument("--max-steps", type=int, default=150)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    w = sub.add_parser("export-workspace",
                       help="evaluate and export workspace error tables")
    w.add_argument("--checkpoint", required=True)
    w.add_argument("--config", default=None)
    w.add_argument("--episodes", type=int, default=1000)
    w.add_argument("--max-steps", type=int, default=150)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--threshold", type=float, default=2.0)
    w.add_argument("--plots", action="store_true")
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_export_workspace)

    f = sub.add_parser("follow-path", help="track a generated path")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--config", default=None)
    f.add_argument("--path", required=True)
    f.add_argument("--system", default=None,
                   help="unused override hook; systems come from the config")
    f.add_argument("--system-index", type=int, default=0)
    f.add_argument("--controller", choices=("policy", "jacobian"),
                   default="policy")
    f.add_argument("--kp", type=float, default=2.0)
    f.add_argument("--damping", "--lambda", dest="damping", type=float,
                   default=0.45)
    f.add_argument("--steps-per-goal", type=int, default=20)
    f.add_argument("--noise", action="store_true",
                   help="enable the default sensor noise model")
    f.add_argument("--start", default=None,
                   help="start joints: beta1,beta2,beta3,alpha1,alpha2,alpha3")
    f.add_argument("--shapes", action="store_true",
                   help="dump one backbone CSV per waypoint")
    f.add_argument("--episode-logs", action="store_true",
                   help="dump per-step episode rows (t, joints, goals, error, reward)")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_follow)

    c = sub.add_parser("compare-jacobian",
                       help="run policy and Jacobian controllers on one path")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--config", default=None)
    c.add_argument("--path", required=True)
    c.add_argument("--system-index", type=int, default=0)
    c.add_argument("--kp", type=float, default=2.0)
    c.add_argument("--damping", "--lambda", dest="damping", type=float,
                   default=0.45)
    c.add_argument("--steps-per-goal", type=int, default=20)
    c.add_argument("--start", default=None)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare_jacobian)

    tr = sub.add_parser("trace", help="replay a scripted episode to JSON")
    tr.add_argument("--config", required=True)
    tr.add_argument("--script", required=True)
    tr.add_argument("--out", default=None)
    tr.set_defaults(func=cmd_trace)

    r = sub.add_parser("env-rpc",
                       help="serve the environment over JSON lines on stdio")
    r.add_argument("--config", required=True)
    r.add_argument("--checkpoint", default=None)
    r.set_defaults(func=cmd_env_rpc)
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, DegenerateFit) as exc:
        _err(str(exc))
        return 2
    except KeyboardInterrupt:
        _err("interrupted")
        return 130


if __name__ == "__main__":
    sys.exit(main())
