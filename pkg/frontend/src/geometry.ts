/** Edit geometry: drawing model, validation, and exact wire serialization. */

import type { EditClass, LandEdit } from './types';

export interface PendingRect {
  kind: 'rect';
  x: number;
  y: number;
  w: number;
  h: number;
  cls: EditClass;
  textureSeed: number;
}

export interface PendingPolygon {
  kind: 'polygon';
  points: [number, number][];
  cls: EditClass;
  textureSeed: number;
}

export type PendingEdit = PendingRect | PendingPolygon;

/** Normalize two drag corners into an integer-pixel rectangle. */
export function rectFromCorners(
  x0: number,
  y0: number,
  x1: number,
  y1: number,
  cls: EditClass,
  textureSeed = 0,
): PendingRect {
  const x = Math.floor(Math.min(x0, x1));
  const y = Math.floor(Math.min(y0, y1));
  const w = Math.max(1, Math.ceil(Math.abs(x1 - x0)));
  const h = Math.max(1, Math.ceil(Math.abs(y1 - y0)));
  return { kind: 'rect', x, y, w, h, cls, textureSeed };
}

export function rectArea(edit: PendingRect): number {
  return edit.w * edit.h;
}

function orient(a: [number, number], b: [number, number], c: [number, number]): number {
  return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
}

function segmentsCross(
  p1: [number, number],
  p2: [number, number],
  p3: [number, number],
  p4: [number, number],
): boolean {
  const d1 = orient(p3, p4, p1);
  const d2 = orient(p3, p4, p2);
  const d3 = orient(p1, p2, p3);
  const d4 = orient(p1, p2, p4);
  return d1 > 0 !== d2 > 0 && d3 > 0 !== d4 > 0;
}

export function polygonSelfIntersects(points: [number, number][]): boolean {
  const n = points.length;
  for (let i = 0; i < n; i++) {
    for (let j = i + 1; j < n; j++) {
      if (Math.abs(i - j) <= 1 || (i === 0 && j === n - 1)) continue;
      if (segmentsCross(points[i], points[(i + 1) % n], points[j], points[(j + 1) % n])) {
        return true;
      }
    }
  }
  return false;
}

/** Inline-validation message for a pending edit, or null when acceptable. */
export function validateEdit(edit: PendingEdit, width: number, height: number): string | null {
  if (edit.kind === 'rect') {
    if (edit.w < 1 || edit.h < 1) return 'rectangle has no area';
    if (edit.x < 0 || edit.y < 0 || edit.x + edit.w > width || edit.y + edit.h > height) {
      return 'rectangle exceeds the scene bounds';
    }
    return null;
  }
  if (edit.points.length < 3) return 'polygon needs at least 3 vertices';
  for (const [px, py] of edit.points) {
    if (px < 0 || py < 0 || px > width || py > height) return 'polygon vertex outside the scene';
  }
  if (polygonSelfIntersects(edit.points)) return 'polygon is self-intersecting';
  return null;
}

/** Serialize exactly as the service's edit schema. */
export function serializeEdit(edit: PendingEdit): LandEdit {
  if (edit.kind === 'rect') {
    return {
      new_class: edit.cls,
      rect: [edit.x, edit.y, edit.w, edit.h],
      polygon: null,
      texture_seed: edit.textureSeed,
    };
  }
  return {
    new_class: edit.cls,
    rect: null,
    polygon: edit.points.map((p) => [p[0], p[1]] as [number, number]),
    texture_seed: edit.textureSeed,
  };
}

export function deserializeEdit(edit: LandEdit): PendingEdit {
  if (edit.rect) {
    const [x, y, w, h] = edit.rect;
    return { kind: 'rect', x, y, w, h, cls: edit.new_class, textureSeed: edit.texture_seed };
  }
  return {
    kind: 'polygon',
    points: (edit.polygon ?? []).map((p) => [p[0], p[1]] as [number, number]),
    cls: edit.new_class,
    textureSeed: edit.texture_seed,
  };
}
