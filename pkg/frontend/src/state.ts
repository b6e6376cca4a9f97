/** View state and its transitions; pure so the whole flow is testable. */

import type { PendingEdit } from './geometry';
import type { EditClass, HistoryEntry, SimStats } from './types';

export interface LayerView {
  name: string;
  visible: boolean;
  opacity: number;
}

export interface ViewState {
  sceneId: string | null;
  layers: LayerView[];
  tool: 'rect' | 'polygon';
  editClass: EditClass;
  pendingEdits: PendingEdit[];
  history: HistoryEntry[]; // append-only
  simulating: boolean;
  error: string | null;
}

export function initialState(): ViewState {
  return {
    sceneId: null,
    layers: [],
    tool: 'rect',
    editClass: 'water',
    pendingEdits: [],
    history: [],
    simulating: false,
    error: null,
  };
}

export function loadScene(state: ViewState, sceneId: string, layerNames: string[]): ViewState {
  return {
    ...state,
    sceneId,
    layers: layerNames.map((name) => ({ name, visible: name === 'rgb', opacity: 1 })),
    pendingEdits: [],
    error: null,
  };
}

export function setTool(state: ViewState, tool: 'rect' | 'polygon'): ViewState {
  return { ...state, tool };
}

export function setEditClass(state: ViewState, cls: EditClass): ViewState {
  return { ...state, editClass: cls };
}

export function toggleLayer(state: ViewState, name: string, visible: boolean): ViewState {
  return {
    ...state,
    layers: state.layers.map((l) => (l.name === name ? { ...l, visible } : l)),
  };
}

export function addEdit(state: ViewState, edit: PendingEdit): ViewState {
  return { ...state, pendingEdits: [...state.pendingEdits, edit] };
}

export function removeEdit(state: ViewState, index: number): ViewState {
  return { ...state, pendingEdits: state.pendingEdits.filter((_, i) => i !== index) };
}

export function reorderEdit(state: ViewState, from: number, to: number): ViewState {
  const edits = [...state.pendingEdits];
  const [moved] = edits.splice(from, 1);
  edits.splice(to, 0, moved);
  return { ...state, pendingEdits: edits };
}

export function changeEditClass(state: ViewState, index: number, cls: EditClass): ViewState {
  return {
    ...state,
    pendingEdits: state.pendingEdits.map((e, i) => (i === index ? { ...e, cls } : e)),
  };
}

/** Simulate is only available with at least one pending edit and no run in flight. */
export function canSimulate(state: ViewState): boolean {
  return state.sceneId !== null && state.pendingEdits.length > 0 && !state.simulating;
}

export function simulateStarted(state: ViewState): ViewState {
  return { ...state, simulating: true, error: null };
}

/** Success clears the pending edits and appends to the history. */
export function simulateFinished(state: ViewState, scenarioId: string, stats: SimStats, finishedAt: number): ViewState {
  return {
    ...state,
    simulating: false,
    pendingEdits: [],
    history: [...state.history, { scenarioId, stats, finishedAt }],
  };
}

export function simulateFailed(state: ViewState, error: string): ViewState {
  return { ...state, simulating: false, error };
}
