/** Browser entry point: binds the controller to the DOM. */

import { ApiClient, EvaluateResponse, FieldResponse, Meta, SurfaceResponse } from "./api.js";
import { AppView, ExplorerApp } from "./app.js";
import { drawAmplitudes, drawSurface } from "./charts.js";
import { HeatmapView } from "./heatmap.js";

function el<T extends HTMLElement>(id: string): T {
  return document.getElementById(id) as T;
}

function fmt(v: number | null): string {
  return v === null ? "—" : v.toPrecision(6);
}

class DomView implements AppView {
  private heatmap = new HeatmapView(el<HTMLCanvasElement>("field-canvas"));
  private pickMu: ((px: number, py: number) => number[] | null) | null = null;

  constructor(private app: () => ExplorerApp) {
    el<HTMLCanvasElement>("surface-canvas").addEventListener("click", (ev) => {
      if (!this.pickMu) return;
      const rect = (ev.target as HTMLCanvasElement).getBoundingClientRect();
      const mu = this.pickMu(ev.clientX - rect.left, ev.clientY - rect.top);
      if (mu) this.app().commitMu(mu);
    });
    el<HTMLButtonElement>("retry").addEventListener("click", () => this.app().init());
  }

  showError(message: string): void {
    const banner = el<HTMLDivElement>("banner");
    banner.hidden = false;
    el<HTMLSpanElement>("banner-text").textContent = message;
  }

  clearError(): void {
    el<HTMLDivElement>("banner").hidden = true;
  }

  renderMeta(meta: Meta): void {
    el<HTMLSpanElement>("case-name").textContent =
      `${meta.case} — ${meta.n_modes} modes`;
    const sliders = el<HTMLDivElement>("sliders");
    sliders.innerHTML = "";
    meta.axes.forEach((axis, i) => {
      const row = document.createElement("label");
      row.className = "slider-row";
      const [a, b] = axis.bounds;
      row.innerHTML =
        `<span class="axis-name">${axis.name}</span>` +
        `<span class="bound">${a}</span>` +
        `<input type="range" min="${a}" max="${b}" step="${(b - a) / 400 || 1}"` +
        ` data-axis="${i}">` +
        `<span class="bound">${b}</span>` +
        `<output data-axis-out="${i}"></output>`;
      sliders.appendChild(row);
      row.querySelector("input")!.addEventListener("input", (ev) => {
        const t = ev.target as HTMLInputElement;
        this.app().setParameter(i, Number(t.value));
      });
    });

    const sel = el<HTMLSelectElement>("variable");
    sel.innerHTML = meta.variables
      .map((v) => `<option value="${v}">${v}</option>`)
      .join("");
    sel.onchange = () => this.app().setVariable(sel.value);

    const qsel = el<HTMLSelectElement>("surface-qoi");
    qsel.innerHTML = meta.qois
      .map((q) => `<option value="${q}">${q}</option>`)
      .join("");
    const grid = meta.axes.map(() => 21);
    const redraw = () => this.app().requestSurface(qsel.value, grid);
    qsel.onchange = redraw;
    if (meta.qois.length > 0) redraw();

    drawAmplitudes(el<HTMLCanvasElement>("amplitude-canvas"), meta.amplitudes);
  }

  setSliders(mu: number[]): void {
    mu.forEach((v, i) => {
      const input = document.querySelector<HTMLInputElement>(`input[data-axis="${i}"]`);
      if (input) input.value = String(v);
      const out = document.querySelector<HTMLOutputElement>(`output[data-axis-out="${i}"]`);
      if (out) out.textContent = v.toPrecision(4);
    });
    el<HTMLSpanElement>("mu-readout").textContent =
      "μ = (" + mu.map((v) => v.toPrecision(4)).join(", ") + ")";
  }

  renderField(field: FieldResponse): void {
    this.heatmap.render(field);
    el<HTMLSpanElement>("field-range").textContent =
      `${field.var}: [${fmt(field.vmin)}, ${fmt(field.vmax)}]`;
  }

  renderQois(result: EvaluateResponse): void {
    const rows: string[] = [];
    for (const [tag, [fx, fy]] of Object.entries(result.forces)) {
      rows.push(`<tr><td>force ${tag}</td><td>${fmt(fx)}, ${fmt(fy)}</td></tr>`);
    }
    rows.push(`<tr><td>pressure drop</td><td>${fmt(result.pressure_drop)}</td></tr>`);
    rows.push(`<tr><td>|u| min / max</td><td>${fmt(result.u_mag_min)} / ${fmt(result.u_mag_max)}</td></tr>`);
    el<HTMLTableElement>("qoi-table").innerHTML = rows.join("");
  }

  renderSurface(surface: SurfaceResponse): void {
    this.pickMu = drawSurface(el<HTMLCanvasElement>("surface-canvas"), surface);
    el<HTMLSpanElement>("surface-label").textContent = surface.qoi;
  }
}

const api = new ApiClient("");
let app: ExplorerApp;
const view = new DomView(() => app);
app = new ExplorerApp(api, view);
app.init();
