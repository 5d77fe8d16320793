/** Canvas charts: mode-amplitude decay and the QoI surface view. */

import { SurfaceResponse } from "./api.js";
import { viridis } from "./colormap.js";

/** Log-scale line chart of relative mode amplitudes per variable. */
export function drawAmplitudes(
  canvas: HTMLCanvasElement,
  amplitudes: { [variable: string]: number[] },
): void {
  const ctx = canvas.getContext("2d")!;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  const pad = { left: 42, right: 8, top: 10, bottom: 24 };
  const colors: { [v: string]: string } = {
    uhat: "#d62728",
    u: "#1f77b4",
    p: "#2ca02c",
  };

  const series = Object.entries(amplitudes).filter(([, s]) => s.length > 0);
  if (series.length === 0) return;
  const rel = series.map(([v, s]) => [v, s.map((a) => a / (s[0] || 1))] as const);
  let lo = 1;
  for (const [, s] of rel) for (const a of s) if (a > 0) lo = Math.min(lo, a);
  const logLo = Math.floor(Math.log10(Math.max(lo, 1e-16)));
  const nModes = Math.max(...rel.map(([, s]) => s.length));

  const x = (m: number) =>
    pad.left + (nModes > 1 ? (m / (nModes - 1)) * (width - pad.left - pad.right) : 0);
  const y = (a: number) => {
    const t = Math.log10(Math.max(a, 1e-16)) / logLo; // 0 at 1, 1 at lo
    return pad.top + t * (height - pad.top - pad.bottom);
  };

  ctx.strokeStyle = "#ccc";
  ctx.fillStyle = "#666";
  ctx.font = "10px sans-serif";
  ctx.textAlign = "right";
  for (let d = 0; d >= logLo; d--) {
    const yy = y(Math.pow(10, d));
    ctx.beginPath();
    ctx.moveTo(pad.left, yy);
    ctx.lineTo(width - pad.right, yy);
    ctx.stroke();
    ctx.fillText(`1e${d}`, pad.left - 4, yy + 3);
  }
  ctx.textAlign = "center";
  for (let m = 0; m < nModes; m++) ctx.fillText(String(m + 1), x(m), height - 8);

  for (const [variable, s] of rel) {
    ctx.strokeStyle = colors[variable] ?? "#888";
    ctx.beginPath();
    s.forEach((a, m) => (m === 0 ? ctx.moveTo(x(m), y(a)) : ctx.lineTo(x(m), y(a))));
    ctx.stroke();
    s.forEach((a, m) => {
      ctx.fillStyle = colors[variable] ?? "#888";
      ctx.beginPath();
      ctx.arc(x(m), y(a), 2.5, 0, 2 * Math.PI);
      ctx.fill();
    });
  }
}

/** QoI over the parameter box: heatmap for two axes, line plot for
 * one. Returns a picker mapping a canvas click to the cell's mu. */
export function drawSurface(
  canvas: HTMLCanvasElement,
  surface: SurfaceResponse,
): (px: number, py: number) => number[] | null {
  const ctx = canvas.getContext("2d")!;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);

  if (surface.axes.length === 1) {
    const xs = surface.axes[0];
    const vals = surface.values as number[];
    const finite = vals.filter((v) => v !== null && Number.isFinite(v));
    const vmin = Math.min(...finite);
    const vmax = Math.max(...finite);
    const span = vmax > vmin ? vmax - vmin : 1;
    const pad = 14;
    const x = (i: number) =>
      pad + (xs.length > 1 ? (i / (xs.length - 1)) * (width - 2 * pad) : 0);
    const y = (v: number) => height - pad - ((v - vmin) / span) * (height - 2 * pad);
    ctx.strokeStyle = "#1f77b4";
    ctx.beginPath();
    vals.forEach((v, i) => (i === 0 ? ctx.moveTo(x(i), y(v)) : ctx.lineTo(x(i), y(v))));
    ctx.stroke();
    return (px) => {
      const i = Math.round(((px - pad) / (width - 2 * pad)) * (xs.length - 1));
      return i >= 0 && i < xs.length ? [xs[i]] : null;
    };
  }

  const [xs, ys] = surface.axes;
  const vals = surface.values as number[][];
  let vmin = Infinity;
  let vmax = -Infinity;
  for (const row of vals)
    for (const v of row) {
      if (v === null || !Number.isFinite(v)) continue;
      vmin = Math.min(vmin, v);
      vmax = Math.max(vmax, v);
    }
  const span = vmax > vmin ? vmax - vmin : 1;
  const cw = width / xs.length;
  const ch = height / ys.length;
  // values[i][j] = qoi at (xs[i], ys[j]); x across, y up
  for (let i = 0; i < xs.length; i++) {
    for (let j = 0; j < ys.length; j++) {
      const v = vals[i][j];
      if (v === null || !Number.isFinite(v)) continue;
      const [r, g, b] = viridis((v - vmin) / span);
      ctx.fillStyle = `rgb(${r},${g},${b})`;
      ctx.fillRect(i * cw, height - (j + 1) * ch, Math.ceil(cw), Math.ceil(ch));
    }
  }
  return (px, py) => {
    const i = Math.floor(px / cw);
    const j = Math.floor((height - py) / ch);
    if (i < 0 || i >= xs.length || j < 0 || j >= ys.length) return null;
    return [xs[i], ys[j]];
  };
}
