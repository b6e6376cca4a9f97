import { describe, expect, it } from 'vitest';

import { PlannerClient, layerValue } from '../src/api';
import { deserializeEdit, serializeEdit, type PendingEdit } from '../src/geometry';
import { pollJob } from '../src/poll';
import * as st from '../src/state';
import { DEFAULT_STATS, MockService } from './mock_service';

function client(svc: MockService): PlannerClient {
  return new PlannerClient('', svc.fetch);
}

describe('edit geometry round trip', () => {
  it('rect edits serialize, echo through the service, and deserialize exactly', async () => {
    const svc = new MockService();
    const api = client(svc);
    const edit: PendingEdit = { kind: 'rect', x: 5, y: 7, w: 20, h: 20, cls: 'water', textureSeed: 3 };
    const scenarioId = await api.createScenario('scn-fixture', [serializeEdit(edit)]);
    const record = await api.scenario(scenarioId);
    expect(record.edits).toHaveLength(1);
    expect(deserializeEdit(record.edits[0])).toEqual(edit);
    expect(record.edits[0].rect).toEqual([5, 7, 20, 20]);
  });

  it('polygon edits round-trip with exact vertices', async () => {
    const svc = new MockService();
    const api = client(svc);
    const edit: PendingEdit = {
      kind: 'polygon',
      points: [
        [2.5, 3.5],
        [20, 4],
        [12.25, 18.75],
      ],
      cls: 'green',
      textureSeed: 0,
    };
    const scenarioId = await api.createScenario('scn-fixture', [serializeEdit(edit)]);
    const record = await api.scenario(scenarioId);
    expect(deserializeEdit(record.edits[0])).toEqual(edit);
  });

  it('a drawn 20x20 rectangle serializes with area 400', () => {
    const edit: PendingEdit = { kind: 'rect', x: 0, y: 0, w: 20, h: 20, cls: 'building', textureSeed: 0 };
    const wire = serializeEdit(edit);
    expect(wire.rect![2] * wire.rect![3]).toBe(400);
  });
});

describe('stats passthrough', () => {
  it('displayed stats equal the service stats JSON verbatim', async () => {
    const svc = new MockService({ jobTicksToDone: 1 });
    const api = client(svc);
    const scenarioId = await api.createScenario('scn-fixture', [
      serializeEdit({ kind: 'rect', x: 1, y: 1, w: 6, h: 6, cls: 'water', textureSeed: 0 }),
    ]);
    const jobId = await api.simulate(scenarioId);
    await pollJob(api, jobId, { sleep: async () => {} });
    const stats = await api.resultStats(scenarioId);
    expect(stats).toEqual(DEFAULT_STATS);

    let state = st.initialState();
    state = st.loadScene(state, 'scn-fixture', ['rgb']);
    state = st.addEdit(state, { kind: 'rect', x: 1, y: 1, w: 6, h: 6, cls: 'water', textureSeed: 0 });
    state = st.simulateStarted(state);
    state = st.simulateFinished(state, scenarioId, stats, 1000);
    expect(state.history[0].stats).toBe(stats); // stored object, no recomputation
  });
});

describe('simulate guard', () => {
  it('zero-edit simulate is disabled', () => {
    let state = st.initialState();
    state = st.loadScene(state, 'scn-fixture', ['rgb']);
    expect(st.canSimulate(state)).toBe(false);
    state = st.addEdit(state, { kind: 'rect', x: 0, y: 0, w: 2, h: 2, cls: 'water', textureSeed: 0 });
    expect(st.canSimulate(state)).toBe(true);
    state = st.removeEdit(state, 0);
    expect(st.canSimulate(state)).toBe(false);
  });

  it('simulate is disabled while a run is in flight', () => {
    let state = st.initialState();
    state = st.loadScene(state, 'scn-fixture', ['rgb']);
    state = st.addEdit(state, { kind: 'rect', x: 0, y: 0, w: 2, h: 2, cls: 'water', textureSeed: 0 });
    state = st.simulateStarted(state);
    expect(st.canSimulate(state)).toBe(false);
  });
});

describe('job polling', () => {
  it('reaches the done terminal state', async () => {
    const svc = new MockService({ jobTicksToDone: 4 });
    const api = client(svc);
    const scenarioId = await api.createScenario('scn-fixture', []);
    const jobId = await api.simulate(scenarioId);
    const waits: number[] = [];
    const job = await pollJob(api, jobId, { sleep: async (ms) => void waits.push(ms) });
    expect(job.status).toBe('done');
    expect(waits.length).toBeGreaterThanOrEqual(3);
    expect(waits[0]).toBe(1000); // 1 s initial interval, then backoff
    expect(waits[1]).toBeGreaterThan(waits[0]);
  });

  it('reaches the failed terminal state and carries the error detail', async () => {
    const svc = new MockService({ jobTicksToDone: 2, failJobs: true });
    const api = client(svc);
    const scenarioId = await api.createScenario('scn-fixture', []);
    const jobId = await api.simulate(scenarioId);
    const job = await pollJob(api, jobId, { sleep: async () => {} });
    expect(job.status).toBe('failed');
    expect(job.error).toBe('boom');
  });

  it('re-simulating a finished scenario is rejected with 409', async () => {
    const svc = new MockService({ jobTicksToDone: 1 });
    const api = client(svc);
    const scenarioId = await api.createScenario('scn-fixture', []);
    const jobId = await api.simulate(scenarioId);
    await pollJob(api, jobId, { sleep: async () => {} });
    await expect(api.simulate(scenarioId)).rejects.toMatchObject({ status: 409 });
  });
});

describe('raw layers', () => {
  it('decodes f32 layers with grid metadata from headers', async () => {
    const svc = new MockService();
    const api = client(svc);
    const layer = await api.sceneLayer('scn-fixture', 'lst');
    expect(layer.width).toBe(12);
    expect(layer.channels).toBe(1);
    expect(layer.values).toHaveLength(144);
    expect(layerValue(layer, 3, 0)).toBe((3 % 7) - 3);
  });
});
