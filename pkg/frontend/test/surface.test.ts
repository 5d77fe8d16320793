/** Surface view: cell picking and the 1D fallback, using a stub
 * canvas (only the 2D-context calls the chart makes). */

import { describe, expect, it } from "vitest";
import { drawSurface } from "../src/charts.js";
import { SurfaceResponse } from "../src/api.js";

function stubCanvas(width: number, height: number): HTMLCanvasElement {
  const calls: string[] = [];
  const ctx = new Proxy(
    {},
    {
      get: (_t, prop) => {
        if (prop === "canvas") return canvas;
        return (...args: unknown[]) => {
          calls.push(String(prop));
        };
      },
      set: () => true,
    },
  );
  const canvas = {
    width,
    height,
    getContext: () => ctx,
    __calls: calls,
  } as unknown as HTMLCanvasElement;
  return canvas;
}

const SURFACE_2D: SurfaceResponse = {
  qoi: "drag:obstacle",
  grid: [3, 2],
  axes: [
    [-1, 0, 1],
    [0, 1],
  ],
  values: [
    [1, 2],
    [3, 4],
    [5, 6],
  ],
};

describe("drawSurface", () => {
  it("maps a click to the cell's exact mu (2D heatmap)", () => {
    const pick = drawSurface(stubCanvas(300, 200), SURFACE_2D);
    // cells are 100 x 100 px; x across (axis 0), y up (axis 1)
    expect(pick(50, 150)).toEqual([-1, 0]); // bottom-left cell
    expect(pick(250, 50)).toEqual([1, 1]); // top-right cell
    expect(pick(150, 199)).toEqual([0, 0]);
    expect(pick(-10, 50)).toBeNull();
    expect(pick(1000, 50)).toBeNull();
  });

  it("falls back to a line plot with index picking for one axis", () => {
    const canvas = stubCanvas(214, 100); // 14 px padding -> 186/2 per step
    const pick = drawSurface(canvas, {
      qoi: "drag:inner",
      grid: [3],
      axes: [[1, 2, 3]],
      values: [5, 6, 7],
    });
    expect(pick(14, 50)).toEqual([1]);
    expect(pick(107, 50)).toEqual([2]);
    expect(pick(200, 50)).toEqual([3]);
    // a line plot never fills heatmap cells
    const calls = (canvas as unknown as { __calls: string[] }).__calls;
    expect(calls).not.toContain("fillRect");
    expect(calls).toContain("stroke");
  });
});
