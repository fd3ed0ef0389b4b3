/**
 * Gym-style binding for the ctrreach concentric tube robot environment.
 *
 * The native core runs in a subprocess (`ctrreach env-rpc`); this wrapper
 * adds no state of its own, so two environments created from the same
 * config and seed produce identical trajectories.
 *
 * Usage:
 *
 *   const env = await makeEnv('configs/binding_env.json');
 *   let obs = await env.reset(42);
 *   const { observation, reward, terminated } = await env.step([0,0,0,0,0,0]);
 *   await env.close();
 */
import { NativeError, RpcClient } from './rpc.js';

export { NativeError } from './rpc.js';

/** Observation/action space description reported by the native core. */
export interface SpaceInfo {
  observationDim: number;
  actionDim: number;
  actionLow: number[];
  actionHigh: number[];
}

export interface StepInfo {
  error: number;
  success: boolean;
  timeout: boolean;
}

export interface StepResult {
  observation: number[];
  reward: number;
  terminated: boolean;
  info: StepInfo;
}

export interface EnvOptions {
  /** Python interpreter used to host the native core (default python3). */
  pythonBin?: string;
  /** Optional policy checkpoint enabling act(). */
  checkpoint?: string;
}

export class CtrReachEnv {
  private constructor(
    private readonly rpc: RpcClient,
    readonly spaces: SpaceInfo,
  ) {}

  static async create(configPath: string, options: EnvOptions = {}): Promise<CtrReachEnv> {
    const args = ['-m', 'ctrreach.cli', 'env-rpc', '--config', configPath];
    if (options.checkpoint) {
      args.push('--checkpoint', options.checkpoint);
    }
    const rpc = new RpcClient(options.pythonBin ?? 'python3', args);
    const reply = await rpc.call({ op: 'spaces' });
    const spaces: SpaceInfo = {
      observationDim: reply.observation_dim as number,
      actionDim: reply.action_dim as number,
      actionLow: reply.action_low as number[],
      actionHigh: reply.action_high as number[],
    };
    return new CtrReachEnv(rpc, spaces);
  }

  /** Start a new episode; returns the initial observation. */
  async reset(seed?: number): Promise<number[]> {
    const msg: Record<string, unknown> = { op: 'reset' };
    if (seed !== undefined) {
      msg.seed = seed;
    }
    const reply = await this.rpc.call(msg);
    return reply.observation as number[];
  }

  /** Apply one action (d_beta x3 in mm, d_alpha x3 in rad). */
  async step(action: number[]): Promise<StepResult> {
    if (action.length !== this.spaces.actionDim) {
      throw new Error(
        `expected action of length ${this.spaces.actionDim}, got ${action.length}`,
      );
    }
    const reply = await this.rpc.call({ op: 'step', action });
    return {
      observation: reply.observation as number[],
      reward: reply.reward as number,
      terminated: reply.terminated as boolean,
      info: reply.info as unknown as StepInfo,
    };
  }

  /** Policy action for the current observation (requires a checkpoint). */
  async act(deterministic = true): Promise<number[]> {
    const reply = await this.rpc.call({ op: 'act', deterministic });
    return reply.action as number[];
  }

  async close(): Promise<void> {
    await this.rpc.close();
  }
}

/** Create an environment handle from a native config file. */
export async function makeEnv(
  configPath: string,
  options: EnvOptions = {},
): Promise<CtrReachEnv> {
  return CtrReachEnv.create(configPath, options);
}
