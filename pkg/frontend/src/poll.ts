/** Job polling: 1 s interval with multiplicative backoff, until a terminal state. */

import type { PlannerClient } from './api';
import type { JobInfo } from './types';

export interface PollOptions {
  initialMs?: number;
  factor?: number;
  maxMs?: number;
  maxAttempts?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

/** Returns the sequence of waits used for n polls (exposed for tests). */
export function backoffDelays(n: number, initialMs = 1000, factor = 1.5, maxMs = 5000): number[] {
  const out = [];
  let d = initialMs;
  for (let i = 0; i < n; i++) {
    out.push(Math.round(d));
    d = Math.min(maxMs, d * factor);
  }
  return out;
}

export async function pollJob(
  client: PlannerClient,
  jobId: string,
  opts: PollOptions = {},
): Promise<JobInfo> {
  const { initialMs = 1000, factor = 1.5, maxMs = 5000, maxAttempts = 600, sleep = defaultSleep } = opts;
  let delay = initialMs;
  for (let attempt = 0; attempt < maxAttempts; attempt++) {
    const job = await client.job(jobId);
    if (job.status === 'done' || job.status === 'failed') return job;
    await sleep(delay);
    delay = Math.min(maxMs, delay * factor);
  }
  throw new Error(`job ${jobId} did not reach a terminal state`);
}
