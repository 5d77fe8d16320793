/** Controller behaviour against intercepted traffic: debouncing,
 * stale-response discard, provenance of displayed numbers, 422
 * snap-back and surface click-through. */

import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";
import { ApiClient } from "../src/api.js";
import { ExplorerApp } from "../src/app.js";
import {
  META_1D,
  RecordingView,
  evaluateFor,
  fieldFor,
  interceptTraffic,
} from "./helpers.js";

function basicHandlers() {
  return {
    meta: () => META_1D,
    evaluate: (mu: number[]) => evaluateFor(mu),
    field: (b: { mu: number[]; var: string; res: number }) =>
      fieldFor(b.mu, b.var, b.res),
  };
}

describe("ExplorerApp", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => {
    vi.useRealTimers();
    vi.unstubAllGlobals();
  });

  async function makeApp(handlers = basicHandlers()) {
    const log = interceptTraffic(handlers);
    const view = new RecordingView();
    const app = new ExplorerApp(new ApiClient(""), view, 150);
    const ok = await app.init();
    await vi.runAllTimersAsync();
    return { app, view, log, ok };
  }

  it("init populates controls from metadata and fetches the first field", async () => {
    const { view, log, ok } = await makeApp();
    expect(ok).toBe(true);
    expect(view.metas[0]).toEqual(META_1D);
    expect(view.sliders[0]).toEqual([2]); // interval midpoint
    expect(log.some((r) => r.url.endsWith("/api/field"))).toBe(true);
    expect(log.some((r) => r.url.endsWith("/api/evaluate"))).toBe(true);
  });

  it("shows a banner and survives an unreachable service", async () => {
    vi.stubGlobal("fetch", async () => {
      throw new TypeError("connect refused");
    });
    const view = new RecordingView();
    const app = new ExplorerApp(new ApiClient(""), view, 150);
    expect(await app.init()).toBe(false);
    expect(view.errors.length).toBe(1);
    expect(view.errors[0]).toContain("unreachable");
  });

  it("issues at most one field request per debounce window", async () => {
    const { app, log } = await makeApp();
    const before = log.filter((r) => r.url.endsWith("/api/field")).length;
    for (let i = 0; i < 25; i++) {
      app.setParameter(0, 1 + (i % 10) / 5);
      await vi.advanceTimersByTimeAsync(20); // rapid wiggle, < delay
    }
    await vi.runAllTimersAsync();
    const after = log.filter((r) => r.url.endsWith("/api/field")).length;
    expect(after - before).toBe(1);
  });

  it("discards stale responses: displayed field matches the latest mu", async () => {
    let release: (() => void) | null = null;
    const slow = new Promise<void>((res) => (release = res));
    const handlers = {
      ...basicHandlers(),
      field: async (b: { mu: number[]; var: string; res: number }) => {
        if (b.mu[0] === 1.2) await slow; // first request lags
        return fieldFor(b.mu, b.var, b.res);
      },
    };
    const { app, view } = await makeApp(handlers);
    view.fields.length = 0;
    view.qois.length = 0;
    app.setParameter(0, 1.2);
    await vi.advanceTimersByTimeAsync(200); // fires, hangs on `slow`
    app.setParameter(0, 2.8);
    await vi.advanceTimersByTimeAsync(200); // second request completes
    release!();
    await vi.runAllTimersAsync();
    expect(view.fields.length).toBe(1);
    expect(view.fields[0].mu).toEqual([2.8]);
    expect(view.qois.every((q) => q.mu[0] === 2.8)).toBe(true);
  });

  it("every displayed number originates from a service response", async () => {
    const { app, view, log } = await makeApp();
    view.fields.length = 0;
    view.qois.length = 0;
    app.setParameter(0, 2.5);
    await vi.runAllTimersAsync();
    const sentMu = log.filter((r) => r.url.endsWith("/api/field")).pop()!
      .body as { mu: number[] };
    expect(view.fields[0]).toEqual(fieldFor(sentMu.mu, "u_mag", 128));
    expect(view.qois[0]).toEqual(evaluateFor(sentMu.mu));
  });

  it("clamps slider values so requests never leave the box", async () => {
    const { app, log } = await makeApp();
    app.setParameter(0, 99);
    app.commitMu([-5]);
    await vi.runAllTimersAsync();
    for (const r of log) {
      const body = r.body as { mu?: number[] } | null;
      if (body?.mu) {
        expect(body.mu[0]).toBeGreaterThanOrEqual(1);
        expect(body.mu[0]).toBeLessThanOrEqual(3);
      }
    }
  });

  it("snaps back and retries when the service returns 422", async () => {
    let reject = true;
    const handlers = {
      ...basicHandlers(),
      field: (b: { mu: number[]; var: string; res: number }) => {
        if (reject) {
          reject = false;
          return { status: 422, error: "parameter outside box" };
        }
        return fieldFor(b.mu, b.var, b.res);
      },
    };
    const { app, view } = await makeApp(handlers);
    view.fields.length = 0;
    reject = true;
    app.setParameter(0, 2.2);
    await vi.runAllTimersAsync();
    expect(view.errors).toEqual([]); // no banner for a 422
    expect(view.fields.length).toBe(1); // retried within the box
    expect(view.fields[0].mu).toEqual([2.2]);
  });

  it("surface click sets exactly the clicked mu on the next field request", async () => {
    const { app, log } = await makeApp();
    app.commitMu([1.7345]);
    await vi.runAllTimersAsync();
    const last = log.filter((r) => r.url.endsWith("/api/field")).pop()!
      .body as { mu: number[] };
    expect(last.mu).toEqual([1.7345]);
  });
});
