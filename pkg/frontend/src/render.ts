/** Raster-to-RGBA conversion and canvas/grid coordinate mapping (pure math). */

import { layerValue } from './api';
import { colorFor, type PaletteScale } from './palette';
import type { RawLayer } from './types';

/** RGBA buffer for a single-channel layer through a palette. */
export function rasterToRgba(layer: RawLayer, scale: PaletteScale, alpha = 255): Uint8ClampedArray {
  const out = new Uint8ClampedArray(layer.width * layer.height * 4);
  for (let i = 0; i < layer.width * layer.height; i++) {
    const [r, g, b] = colorFor(scale, layer.values[i]);
    out[i * 4] = r;
    out[i * 4 + 1] = g;
    out[i * 4 + 2] = b;
    out[i * 4 + 3] = alpha;
  }
  return out;
}

/** RGBA buffer for a 3-channel reflectance layer (band-sequential planes). */
export function rgbToRgba(layer: RawLayer, alpha = 255): Uint8ClampedArray {
  const n = layer.width * layer.height;
  const out = new Uint8ClampedArray(n * 4);
  for (let i = 0; i < n; i++) {
    out[i * 4] = Math.min(255, Math.max(0, Math.round(layer.values[i] * 255)));
    out[i * 4 + 1] = Math.min(255, Math.max(0, Math.round(layer.values[n + i] * 255)));
    out[i * 4 + 2] = Math.min(255, Math.max(0, Math.round(layer.values[2 * n + i] * 255)));
    out[i * 4 + 3] = alpha;
  }
  return out;
}

/**
 * Map a canvas pixel to a layer pixel.  All layers cover the same ground
 * extent, so a layer with a coarser grid (fewer pixels) maps through the
 * ratio of grid sizes; the satellite grid renders at `scale` device pixels
 * per satellite pixel.
 */
export function canvasToLayerPixel(
  canvasX: number,
  canvasY: number,
  satWidth: number,
  satHeight: number,
  scale: number,
  layer: RawLayer,
): { x: number; y: number } | null {
  const sx = canvasX / scale;
  const sy = canvasY / scale;
  if (sx < 0 || sy < 0 || sx >= satWidth || sy >= satHeight) return null;
  const x = Math.floor((sx * layer.width) / satWidth);
  const y = Math.floor((sy * layer.height) / satHeight);
  if (x < 0 || y < 0 || x >= layer.width || y >= layer.height) return null;
  return { x, y };
}

/** Hover readout: the raw layer value at the canvas position, or null off-grid. */
export function readoutAt(
  canvasX: number,
  canvasY: number,
  satWidth: number,
  satHeight: number,
  scale: number,
  layer: RawLayer,
): number | null {
  const px = canvasToLayerPixel(canvasX, canvasY, satWidth, satHeight, scale, layer);
  if (!px) return null;
  return layerValue(layer, px.x, px.y);
}
