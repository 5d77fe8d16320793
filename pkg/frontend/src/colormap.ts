/** Fixed perceptual colormap (viridis control points, linearly
 * interpolated). Mapping values to colors is the only "numerics" the
 * client performs. */

const STOPS: [number, number, number][] = [
  [68, 1, 84],
  [72, 40, 120],
  [62, 74, 137],
  [49, 104, 142],
  [38, 130, 142],
  [31, 158, 137],
  [53, 183, 121],
  [109, 205, 89],
  [180, 222, 44],
  [253, 231, 37],
];

/** Map t in [0, 1] to an [r, g, b] triple. */
export function viridis(t: number): [number, number, number] {
  const x = Math.min(1, Math.max(0, t)) * (STOPS.length - 1);
  const i = Math.min(STOPS.length - 2, Math.floor(x));
  const f = x - i;
  const [r0, g0, b0] = STOPS[i];
  const [r1, g1, b1] = STOPS[i + 1];
  return [
    Math.round(r0 + f * (r1 - r0)),
    Math.round(g0 + f * (g1 - g0)),
    Math.round(b0 + f * (b1 - b0)),
  ];
}

/** RGBA pixel buffer for a raster of values; null cells transparent.
 * `values` is row-major with row 0 at the bottom (y increasing), the
 * buffer is top-down as canvas ImageData expects. */
export function rasterize(
  values: (number | null)[][],
  vmin: number,
  vmax: number,
): Uint8ClampedArray<ArrayBuffer> {
  const rows = values.length;
  const cols = values[0].length;
  const span = vmax > vmin ? vmax - vmin : 1;
  const out = new Uint8ClampedArray(new ArrayBuffer(rows * cols * 4));
  for (let j = 0; j < rows; j++) {
    const row = values[rows - 1 - j];
    for (let i = 0; i < cols; i++) {
      const v = row[i];
      const o = 4 * (j * cols + i);
      if (v === null || v === undefined) continue; // transparent
      const [r, g, b] = viridis((v - vmin) / span);
      out[o] = r;
      out[o + 1] = g;
      out[o + 2] = b;
      out[o + 3] = 255;
    }
  }
  return out;
}
