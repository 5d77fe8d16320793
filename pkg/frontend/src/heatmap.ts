/** Canvas heatmap of a field raster with boundary polyline overlay. */

import { FieldResponse } from "./api.js";
import { rasterize } from "./colormap.js";

export class HeatmapView {
  private ctx: CanvasRenderingContext2D;

  constructor(private canvas: HTMLCanvasElement) {
    this.ctx = canvas.getContext("2d")!;
  }

  render(field: FieldResponse): void {
    const { canvas, ctx } = this;
    const [[x0, y0], [x1, y1]] = field.bbox;
    const res = field.res;
    ctx.clearRect(0, 0, canvas.width, canvas.height);

    // aspect-preserving placement of the bounding box on the canvas
    const scale = Math.min(canvas.width / (x1 - x0), canvas.height / (y1 - y0));
    const w = (x1 - x0) * scale;
    const h = (y1 - y0) * scale;
    const ox = (canvas.width - w) / 2;
    const oy = (canvas.height - h) / 2;
    const toCanvas = (x: number, y: number): [number, number] => [
      ox + ((x - x0) / (x1 - x0)) * w,
      oy + ((y1 - y) / (y1 - y0)) * h,
    ];

    if (field.vmin !== null && field.vmax !== null) {
      const pixels = rasterize(field.values, field.vmin, field.vmax);
      const img = new ImageData(pixels, res, res);
      // draw at native resolution, then scale up without smoothing so
      // masked (transparent) cells keep crisp edges
      const off = document.createElement("canvas");
      off.width = res;
      off.height = res;
      off.getContext("2d")!.putImageData(img, 0, 0);
      ctx.imageSmoothingEnabled = false;
      ctx.drawImage(off, ox, oy, w, h);
    }

    ctx.strokeStyle = "#1b1e23";
    ctx.lineWidth = 1.5;
    for (const seg of field.boundary) {
      ctx.beginPath();
      seg.points.forEach(([x, y], i) => {
        const [cx, cy] = toCanvas(x, y);
        if (i === 0) ctx.moveTo(cx, cy);
        else ctx.lineTo(cx, cy);
      });
      ctx.stroke();
    }
  }
}
