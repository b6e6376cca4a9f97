/** Typed client for the planner HTTP API; all numbers shown in the UI come from here. */

import type { JobInfo, LandEdit, RawLayer, SceneInfo, ScenarioRecord, SimStats } from './types';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

async function checkJson<T>(res: Response): Promise<T> {
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = (await res.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // keep statusText
    }
    throw new ApiError(res.status, detail);
  }
  return (await res.json()) as T;
}

export class PlannerClient {
  constructor(
    private readonly base: string = '',
    private readonly fetchImpl: FetchLike = (u, i) => fetch(u, i),
  ) {}

  async listScenes(): Promise<string[]> {
    const body = await checkJson<{ scenes: string[] }>(await this.fetchImpl(`${this.base}/scenes`));
    return body.scenes;
  }

  async generateScene(seed: number, satSize = 160): Promise<string> {
    const res = await this.fetchImpl(`${this.base}/scenes`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ seed, sat_size: satSize }),
    });
    return (await checkJson<{ scene_id: string }>(res)).scene_id;
  }

  async sceneInfo(sceneId: string): Promise<SceneInfo> {
    return checkJson(await this.fetchImpl(`${this.base}/scenes/${sceneId}`));
  }

  /** Fetch a raw f32 layer; grid dims come from the X-* response headers. */
  async sceneLayer(sceneId: string, name: string): Promise<RawLayer> {
    const res = await this.fetchImpl(`${this.base}/scenes/${sceneId}/layers/${name}`);
    if (!res.ok) throw new ApiError(res.status, `layer ${name}: ${res.statusText}`);
    return decodeRawLayer(res);
  }

  async createScenario(sceneId: string, edits: LandEdit[]): Promise<string> {
    const res = await this.fetchImpl(`${this.base}/scenes/${sceneId}/scenarios`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ edits }),
    });
    return (await checkJson<{ scenario_id: string }>(res)).scenario_id;
  }

  async scenario(scenarioId: string): Promise<ScenarioRecord> {
    return checkJson(await this.fetchImpl(`${this.base}/scenarios/${scenarioId}`));
  }

  async simulate(scenarioId: string): Promise<string> {
    const res = await this.fetchImpl(`${this.base}/scenarios/${scenarioId}/simulate`, {
      method: 'POST',
    });
    return (await checkJson<{ job_id: string }>(res)).job_id;
  }

  async job(jobId: string): Promise<JobInfo> {
    return checkJson(await this.fetchImpl(`${this.base}/jobs/${jobId}`));
  }

  async resultStats(scenarioId: string): Promise<SimStats> {
    return checkJson(await this.fetchImpl(`${this.base}/scenarios/${scenarioId}/results/stats`));
  }

  async resultLayer(scenarioId: string, name: string): Promise<RawLayer> {
    const res = await this.fetchImpl(`${this.base}/scenarios/${scenarioId}/results/${name}`);
    if (!res.ok) throw new ApiError(res.status, `result ${name}: ${res.statusText}`);
    return decodeRawLayer(res);
  }
}

export async function decodeRawLayer(res: Response): Promise<RawLayer> {
  const width = Number(res.headers.get('X-Width'));
  const height = Number(res.headers.get('X-Height'));
  const channels = Number(res.headers.get('X-Channels'));
  const gsd = Number(res.headers.get('X-Gsd'));
  const buffer = await res.arrayBuffer();
  if (!width || !height || !channels || buffer.byteLength !== width * height * channels * 4) {
    throw new ApiError(500, `malformed layer payload (${buffer.byteLength} bytes for ${width}x${height}x${channels})`);
  }
  return { width, height, channels, gsd, values: new Float32Array(buffer) };
}

/** Value of channel c at pixel (x, y) in a band-sequential raw layer. */
export function layerValue(layer: RawLayer, x: number, y: number, c = 0): number {
  return layer.values[c * layer.width * layer.height + y * layer.width + x];
}
