/**
 * JSON-lines RPC client for a subprocess speaking one reply per request
 * on stdout. Requests are serialized; replies resolve in order.
 */
import { ChildProcessByStdio, spawn } from 'node:child_process';
import { createInterface, Interface } from 'node:readline';
import type { Readable, Writable } from 'node:stream';

/** Error raised by the native side, carrying its diagnostic text and type. */
export class NativeError extends Error {
  readonly nativeType: string;

  constructor(message: string, nativeType: string) {
    super(message);
    this.name = 'NativeError';
    this.nativeType = nativeType;
  }
}

interface Pending {
  resolve: (value: Record<string, unknown>) => void;
  reject: (err: Error) => void;
}

export class RpcClient {
  private readonly proc: ChildProcessByStdio<Writable, Readable, null>;
  private readonly lines: Interface;
  private readonly pending: Pending[] = [];
  private closed = false;

  constructor(command: string, args: string[]) {
    this.proc = spawn(command, args, { stdio: ['pipe', 'pipe', 'inherit'] });
    this.lines = createInterface({ input: this.proc.stdout });
    this.lines.on('line', (line) => this.onLine(line));
    this.proc.on('exit', () => this.flushPending(new Error('rpc process exited')));
    this.proc.on('error', (err) => this.flushPending(err));
  }

  private onLine(line: string): void {
    const waiter = this.pending.shift();
    if (!waiter) {
      return;
    }
    let reply: Record<string, unknown>;
    try {
      reply = JSON.parse(line) as Record<string, unknown>;
    } catch (err) {
      waiter.reject(new Error(`malformed rpc reply: ${line}`));
      return;
    }
    if (typeof reply.error === 'string') {
      waiter.reject(new NativeError(reply.error, String(reply.type ?? 'Error')));
      return;
    }
    waiter.resolve(reply);
  }

  private flushPending(err: Error): void {
    this.closed = true;
    while (this.pending.length > 0) {
      this.pending.shift()!.reject(err);
    }
  }

  call(message: Record<string, unknown>): Promise<Record<string, unknown>> {
    if (this.closed) {
      return Promise.reject(new Error('rpc client is closed'));
    }
    return new Promise((resolve, reject) => {
      this.pending.push({ resolve, reject });
      this.proc.stdin.write(`${JSON.stringify(message)}\n`);
    });
  }

  async close(): Promise<void> {
    if (this.closed) {
      return;
    }
    try {
      await this.call({ op: 'close' });
    } catch {
      // the process may already have exited; killing below is enough
    }
    this.closed = true;
    this.lines.close();
    this.proc.kill();
  }
}
