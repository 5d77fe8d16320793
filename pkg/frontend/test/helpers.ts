/** Shared fakes: an in-memory service behind an intercepted fetch, and
 * a recording view. All tests drive the real ApiClient through the
 * intercepted fetch so request traffic can be asserted. */

import { vi } from "vitest";
import {
  EvaluateResponse,
  FieldResponse,
  Meta,
  SurfaceResponse,
} from "../src/api.js";
import { AppView } from "../src/app.js";

export const META_1D: Meta = {
  case: "couette",
  axes: [{ name: "mu1", bounds: [1, 3] }],
  n_modes: 4,
  variables: ["u_mag", "u_x", "u_y", "p"],
  qois: ["drag:inner"],
  amplitudes: { uhat: [1, 0.1, 0.01, 0.001], u: [2, 0.2, 0.02, 0.002], p: [3, 0.3, 0.03, 0.003] },
};

export interface RequestLog {
  url: string;
  body: unknown;
}

/** Install a fetch mock that answers the service API from callbacks
 * and records every request. */
export function interceptTraffic(handlers: {
  meta?: () => Meta | { status: number; error: string };
  evaluate?: (mu: number[]) => EvaluateResponse | { status: number; error: string };
  field?: (body: { mu: number[]; var: string; res: number }) =>
    | FieldResponse
    | { status: number; error: string }
    | Promise<FieldResponse>;
  surface?: (body: { qoi: string; grid: number[] }) => SurfaceResponse;
}): RequestLog[] {
  const log: RequestLog[] = [];
  vi.stubGlobal("fetch", async (url: string, init?: RequestInit) => {
    const body = init?.body ? JSON.parse(init.body as string) : null;
    log.push({ url, body });
    let result: unknown;
    if (url.endsWith("/api/meta")) result = handlers.meta?.();
    else if (url.endsWith("/api/evaluate")) result = handlers.evaluate?.(body.mu);
    else if (url.endsWith("/api/field")) result = await handlers.field?.(body);
    else if (url.endsWith("/api/surface")) result = handlers.surface?.(body);
    if (result === undefined) throw new Error(`unhandled request ${url}`);
    const err = result as { status?: number; error?: string };
    if (err && typeof err.status === "number") {
      return new Response(JSON.stringify({ error: err.error }), { status: err.status });
    }
    return new Response(JSON.stringify(result), { status: 200 });
  });
  return log;
}

export function evaluateFor(mu: number[]): EvaluateResponse {
  // arbitrary but mu-dependent so stale responses are detectable
  return {
    mu,
    forces: { inner: [10 * mu[0], -mu[0]] },
    pressure_drop: null,
    u_mag_min: 0,
    u_mag_max: mu[0] * 2,
  };
}

export function fieldFor(mu: number[], variable: string, res: number): FieldResponse {
  return {
    mu,
    var: variable,
    res,
    bbox: [[-3, -3], [3, 3]],
    values: [
      [null, mu[0]],
      [mu[0] + 1, null],
    ],
    vmin: mu[0],
    vmax: mu[0] + 1,
    boundary: [{ tag: "inner", points: [[1, 0], [0, 1]] }],
  };
}

export class RecordingView implements AppView {
  errors: string[] = [];
  sliders: number[][] = [];
  fields: FieldResponse[] = [];
  qois: EvaluateResponse[] = [];
  metas: Meta[] = [];
  surfaces: SurfaceResponse[] = [];

  showError(message: string): void {
    this.errors.push(message);
  }
  clearError(): void {}
  setSliders(mu: number[]): void {
    this.sliders.push(mu.slice());
  }
  renderField(field: FieldResponse): void {
    this.fields.push(field);
  }
  renderQois(result: EvaluateResponse): void {
    this.qois.push(result);
  }
  renderMeta(meta: Meta): void {
    this.metas.push(meta);
  }
  renderSurface(surface: SurfaceResponse): void {
    this.surfaces.push(surface);
  }
}
