/** Colormaps for layer rendering; the diverging palette is centered at zero. */

export type Stop = [number, [number, number, number]];

export const TEMPERATURE_STOPS: Stop[] = [
  [0.0, [15, 50, 170]],
  [0.35, [80, 180, 220]],
  [0.65, [245, 215, 95]],
  [1.0, [195, 35, 35]],
];

export const DIVERGING_STOPS: Stop[] = [
  [0.0, [35, 70, 200]],
  [0.5, [245, 245, 245]],
  [1.0, [200, 45, 35]],
];

function interp(stops: Stop[], t: number): [number, number, number] {
  const x = Math.min(1, Math.max(0, t));
  for (let i = 1; i < stops.length; i++) {
    const [p1, c1] = stops[i - 1];
    const [p2, c2] = stops[i];
    if (x <= p2) {
      const f = p2 === p1 ? 0 : (x - p1) / (p2 - p1);
      return [
        Math.round(c1[0] + f * (c2[0] - c1[0])),
        Math.round(c1[1] + f * (c2[1] - c1[1])),
        Math.round(c1[2] + f * (c2[2] - c1[2])),
      ];
    }
  }
  return stops[stops.length - 1][1];
}

export interface PaletteScale {
  min: number;
  max: number;
  stops: Stop[];
}

/** Linear scale over the observed range. */
export function temperatureScale(min: number, max: number): PaletteScale {
  return { min, max, stops: TEMPERATURE_STOPS };
}

/** Symmetric scale so the midpoint color sits exactly at value 0. */
export function divergingScale(values: Iterable<number>): PaletteScale {
  let amp = 0;
  for (const v of values) amp = Math.max(amp, Math.abs(v));
  if (amp === 0) amp = 1e-9;
  return { min: -amp, max: amp, stops: DIVERGING_STOPS };
}

export function colorFor(scale: PaletteScale, value: number): [number, number, number] {
  const t = (value - scale.min) / (scale.max - scale.min);
  return interp(scale.stops, t);
}

/** Evenly spaced legend entries (value, css color). */
export function legendTicks(scale: PaletteScale, n = 5): { value: number; color: string }[] {
  const out = [];
  for (let i = 0; i < n; i++) {
    const value = scale.min + ((scale.max - scale.min) * i) / (n - 1);
    const [r, g, b] = colorFor(scale, value);
    out.push({ value, color: `rgb(${r},${g},${b})` });
  }
  return out;
}
