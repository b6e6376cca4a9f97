/** Shared types mirroring the planner service wire schemas. */

export type EditClass = 'water' | 'green' | 'building';

export interface RectEdit {
  new_class: EditClass;
  rect: [number, number, number, number]; // x, y, w, h in satellite pixels
  polygon?: null;
  texture_seed: number;
}

export interface PolygonEdit {
  new_class: EditClass;
  rect?: null;
  polygon: [number, number][];
  texture_seed: number;
}

export type LandEdit = RectEdit | PolygonEdit;

export interface LayerMeta {
  name: string;
  width: number;
  height: number;
  channels: number;
  gsd: number;
}

export interface SceneInfo {
  id: string;
  meta: Record<string, number>;
  layers: LayerMeta[];
}

/** A decoded raw layer: f32 planes with grid metadata from response headers. */
export interface RawLayer {
  width: number;
  height: number;
  channels: number;
  gsd: number;
  values: Float32Array; // band-sequential planes, row-major
}

export interface RegionStats {
  edit_index: number;
  new_class: EditClass;
  mean: number;
  min: number;
  max: number;
  pixels: number;
}

export interface SimStats {
  overall: { mean: number; min: number; max: number };
  regions: RegionStats[];
}

export type JobStatus = 'queued' | 'running' | 'done' | 'failed';

export interface JobInfo {
  id: string;
  scenario_id: string;
  status: JobStatus;
  error: string | null;
}

export interface ScenarioRecord {
  id: string;
  scene_id: string;
  edits: LandEdit[];
  status: string;
  error: string | null;
}

export interface HistoryEntry {
  scenarioId: string;
  finishedAt: number;
  stats: SimStats;
}
