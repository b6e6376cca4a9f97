/** DOM wiring for the what-if loop; all logic lives in the pure modules. */

import { PlannerClient, layerValue } from './api';
import {
  deserializeEdit,
  rectFromCorners,
  serializeEdit,
  validateEdit,
  type PendingEdit,
  type PendingPolygon,
} from './geometry';
import { divergingScale, legendTicks, temperatureScale, type PaletteScale } from './palette';
import { pollJob } from './poll';
import { canvasToLayerPixel, rasterToRgba, readoutAt, rgbToRgba } from './render';
import * as st from './state';
import type { EditClass, RawLayer, SimStats } from './types';

const SCALE = 4; // device pixels per satellite pixel (nearest-neighbor)

const client = new PlannerClient('');
let state = st.initialState();
let satLayers: Record<string, RawLayer> = {};
let resultLayers: Record<string, RawLayer> = {};
let satWidth = 0;
let satHeight = 0;
let draftPolygon: [number, number][] = [];
let dragStart: [number, number] | null = null;
let lastStats: SimStats | null = null;

function $(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element ${id}`);
  return el;
}

function canvas(): HTMLCanvasElement {
  return $('view') as HTMLCanvasElement;
}

function setError(message: string | null): void {
  const banner = $('error-banner');
  banner.textContent = message ?? '';
  banner.style.display = message ? 'block' : 'none';
}

function drawLayerImage(ctx: CanvasRenderingContext2D, layer: RawLayer, rgba: Uint8ClampedArray, opacity: number): void {
  const off = document.createElement('canvas');
  off.width = layer.width;
  off.height = layer.height;
  off.getContext('2d')!.putImageData(new ImageData(rgba, layer.width, layer.height), 0, 0);
  ctx.save();
  ctx.globalAlpha = opacity;
  ctx.imageSmoothingEnabled = false; // nearest neighbor keeps pixel boundaries visible
  ctx.drawImage(off, 0, 0, satWidth * SCALE, satHeight * SCALE);
  ctx.restore();
}

function scaleFor(name: string, layer: RawLayer): PaletteScale {
  if (name === 'delta_ta') return divergingScale(layer.values);
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of layer.values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  return temperatureScale(lo, hi === lo ? lo + 1e-9 : hi);
}

function redraw(): void {
  const ctx = canvas().getContext('2d')!;
  ctx.clearRect(0, 0, canvas().width, canvas().height);
  for (const view of state.layers) {
    if (!view.visible) continue;
    const layer = resultLayers[view.name] ?? satLayers[view.name];
    if (!layer) continue;
    const rgba =
      layer.channels === 3
        ? rgbToRgba(layer, Math.round(view.opacity * 255))
        : rasterToRgba(layer, scaleFor(view.name, layer), Math.round(view.opacity * 255));
    drawLayerImage(ctx, layer, rgba, view.opacity);
  }
  drawPendingEdits(ctx);
  renderLegend();
}

const CLASS_COLORS: Record<EditClass, string> = {
  water: '#2060ff',
  green: '#20a040',
  building: '#a06040',
};

function drawPendingEdits(ctx: CanvasRenderingContext2D): void {
  for (const edit of state.pendingEdits) {
    ctx.strokeStyle = CLASS_COLORS[edit.cls];
    ctx.lineWidth = 2;
    if (edit.kind === 'rect') {
      ctx.strokeRect(edit.x * SCALE, edit.y * SCALE, edit.w * SCALE, edit.h * SCALE);
    } else {
      ctx.beginPath();
      edit.points.forEach(([x, y], i) => (i ? ctx.lineTo(x * SCALE, y * SCALE) : ctx.moveTo(x * SCALE, y * SCALE)));
      ctx.closePath();
      ctx.stroke();
    }
  }
  if (draftPolygon.length > 0) {
    ctx.strokeStyle = CLASS_COLORS[state.editClass];
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    draftPolygon.forEach(([x, y], i) => (i ? ctx.lineTo(x * SCALE, y * SCALE) : ctx.moveTo(x * SCALE, y * SCALE)));
    ctx.stroke();
    ctx.setLineDash([]);
  }
}

function renderLegend(): void {
  const legend = $('legend');
  legend.innerHTML = '';
  const active = state.layers.find((l) => l.visible && (resultLayers[l.name] ?? satLayers[l.name])?.channels === 1);
  if (!active) return;
  const layer = resultLayers[active.name] ?? satLayers[active.name];
  const scale = scaleFor(active.name, layer);
  for (const tick of legendTicks(scale)) {
    const item = document.createElement('span');
    item.className = 'legend-item';
    item.innerHTML = `<i style="background:${tick.color}"></i>${tick.value.toFixed(1)}`;
    legend.appendChild(item);
  }
}

function renderLayerList(): void {
  const list = $('layers');
  list.innerHTML = '';
  for (const view of state.layers) {
    const row = document.createElement('label');
    const box = document.createElement('input');
    box.type = 'checkbox';
    box.checked = view.visible;
    box.onchange = () => {
      state = st.toggleLayer(state, view.name, box.checked);
      redraw();
    };
    row.appendChild(box);
    row.appendChild(document.createTextNode(view.name));
    list.appendChild(row);
  }
}

function renderEditList(): void {
  const list = $('edits');
  list.innerHTML = '';
  state.pendingEdits.forEach((edit, i) => {
    const row = document.createElement('li');
    const label = edit.kind === 'rect' ? `rect ${edit.w}x${edit.h}` : `polygon ${edit.points.length} pts`;
    row.textContent = `${edit.cls} ${label} `;
    const del = document.createElement('button');
    del.textContent = 'x';
    del.onclick = () => {
      state = st.removeEdit(state, i);
      renderEditList();
      redraw();
      updateSimulateButton();
    };
    row.appendChild(del);
    list.appendChild(row);
  });
}

function renderStats(stats: SimStats | null): void {
  const panel = $('stats');
  if (!stats) {
    panel.textContent = 'no results yet';
    return;
  }
  const fmt = (x: number) => x.toFixed(3);
  const lines = [
    `overall: mean ${fmt(stats.overall.mean)} / min ${fmt(stats.overall.min)} / max ${fmt(stats.overall.max)} degC`,
  ];
  for (const r of stats.regions) {
    lines.push(
      `edit ${r.edit_index} (${r.new_class}): mean ${fmt(r.mean)} / min ${fmt(r.min)} / max ${fmt(r.max)} over ${r.pixels} px`,
    );
  }
  panel.textContent = lines.join('\n');
}

function renderHistory(): void {
  const list = $('history');
  list.innerHTML = '';
  for (const entry of state.history) {
    const row = document.createElement('li');
    const when = new Date(entry.finishedAt).toLocaleTimeString();
    const btn = document.createElement('button');
    btn.textContent = `${entry.scenarioId} @ ${when}`;
    btn.onclick = () => restoreScenario(entry.scenarioId, entry.stats);
    row.appendChild(btn);
    list.appendChild(row);
  }
}

function updateSimulateButton(): void {
  ($('simulate') as HTMLButtonElement).disabled = !st.canSimulate(state);
}

async function restoreScenario(scenarioId: string, stats: SimStats): Promise<void> {
  try {
    resultLayers = {};
    for (const name of ['ta_base', 'ta_new', 'delta_ta', 'lst_new']) {
      resultLayers[name] = await client.resultLayer(scenarioId, name);
    }
    ensureResultLayerViews();
    lastStats = stats;
    renderStats(stats);
    redraw();
  } catch (e) {
    setError(String(e));
  }
}

function ensureResultLayerViews(): void {
  for (const name of Object.keys(resultLayers)) {
    if (!state.layers.some((l) => l.name === name)) {
      state = { ...state, layers: [...state.layers, { name, visible: name === 'delta_ta', opacity: 0.85 }] };
    }
  }
  renderLayerList();
}

async function loadScene(sceneId: string): Promise<void> {
  const info = await client.sceneInfo(sceneId);
  const rgbMeta = info.layers.find((l) => l.name === 'rgb')!;
  satWidth = rgbMeta.width;
  satHeight = rgbMeta.height;
  canvas().width = satWidth * SCALE;
  canvas().height = satHeight * SCALE;
  satLayers = {};
  for (const meta of info.layers) {
    satLayers[meta.name] = await client.sceneLayer(sceneId, meta.name);
  }
  resultLayers = {};
  state = st.loadScene(state, sceneId, info.layers.map((l) => l.name));
  renderLayerList();
  renderEditList();
  renderStats(null);
  redraw();
  updateSimulateButton();
}

async function simulate(): Promise<void> {
  if (!st.canSimulate(state) || !state.sceneId) return;
  for (const [i, edit] of state.pendingEdits.entries()) {
    const problem = validateEdit(edit, satWidth, satHeight);
    if (problem) {
      setError(`edit ${i}: ${problem}`);
      return;
    }
  }
  state = st.simulateStarted(state);
  updateSimulateButton();
  setError(null);
  try {
    const scenarioId = await client.createScenario(
      state.sceneId,
      state.pendingEdits.map(serializeEdit),
    );
    const jobId = await client.simulate(scenarioId);
    const job = await pollJob(client, jobId);
    if (job.status === 'failed') {
      state = st.simulateFailed(state, job.error ?? 'simulation failed');
      setError(state.error);
    } else {
      const stats = await client.resultStats(scenarioId);
      state = st.simulateFinished(state, scenarioId, stats, Date.now());
      lastStats = stats;
      renderStats(stats);
      await restoreScenario(scenarioId, stats);
      renderHistory();
      renderEditList();
    }
  } catch (e) {
    state = st.simulateFailed(state, String(e));
    setError(state.error);
  }
  updateSimulateButton();
}

function canvasPos(ev: MouseEvent): [number, number] {
  const rect = canvas().getBoundingClientRect();
  return [(ev.clientX - rect.left) / SCALE, (ev.clientY - rect.top) / SCALE];
}

function wireCanvas(): void {
  const el = canvas();
  el.onmousedown = (ev) => {
    if (state.tool === 'rect') dragStart = canvasPos(ev);
  };
  el.onmouseup = (ev) => {
    if (state.tool === 'rect' && dragStart) {
      const [x1, y1] = canvasPos(ev);
      const edit = rectFromCorners(dragStart[0], dragStart[1], x1, y1, state.editClass);
      dragStart = null;
      const problem = validateEdit(edit, satWidth, satHeight);
      if (problem) {
        setError(problem);
        return;
      }
      state = st.addEdit(state, edit);
      renderEditList();
      redraw();
      updateSimulateButton();
    }
  };
  el.onclick = (ev) => {
    if (state.tool !== 'polygon') return;
    const [x, y] = canvasPos(ev);
    draftPolygon.push([x, y]);
    redraw();
  };
  el.ondblclick = () => {
    if (state.tool !== 'polygon' || draftPolygon.length < 3) return;
    const edit: PendingPolygon = {
      kind: 'polygon',
      points: draftPolygon.slice(0, -1) as [number, number][],
      cls: state.editClass,
      textureSeed: 0,
    };
    draftPolygon = [];
    const problem = validateEdit(edit, satWidth, satHeight);
    if (problem) {
      setError(problem);
      redraw();
      return;
    }
    state = st.addEdit(state, edit);
    renderEditList();
    redraw();
    updateSimulateButton();
  };
  el.onmousemove = (ev) => {
    const [cx, cy] = [ev.offsetX, ev.offsetY];
    const active = state.layers.find((l) => l.visible && (resultLayers[l.name] ?? satLayers[l.name])?.channels === 1);
    const readoutEl = $('readout');
    if (!active) {
      readoutEl.textContent = '';
      return;
    }
    const layer = resultLayers[active.name] ?? satLayers[active.name];
    const value = readoutAt(cx, cy, satWidth, satHeight, SCALE, layer);
    const px = canvasToLayerPixel(cx, cy, satWidth, satHeight, SCALE, layer);
    readoutEl.textContent =
      value === null || !px ? '' : `${active.name}[${px.x}, ${px.y}] = ${value.toFixed(2)} degC`;
  };
}

async function init(): Promise<void> {
  wireCanvas();
  $('simulate').onclick = () => void simulate();
  ($('tool-rect') as HTMLInputElement).onchange = () => (state = st.setTool(state, 'rect'));
  ($('tool-polygon') as HTMLInputElement).onchange = () => (state = st.setTool(state, 'polygon'));
  ($('class-select') as HTMLSelectElement).onchange = (ev) => {
    state = st.setEditClass(state, (ev.target as HTMLSelectElement).value as EditClass);
  };
  $('load-scene').onclick = async () => {
    const id = ($('scene-id') as HTMLInputElement).value.trim();
    try {
      await loadScene(id);
    } catch (e) {
      setError(String(e));
    }
  };
  try {
    const scenes = await client.listScenes();
    if (scenes.length > 0) {
      ($('scene-id') as HTMLInputElement).value = scenes[0];
      await loadScene(scenes[0]);
    }
  } catch (e) {
    setError(`service unreachable: ${String(e)}`);
  }
}

if (typeof document !== 'undefined') {
  void init();
}
