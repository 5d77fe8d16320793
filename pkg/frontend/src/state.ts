/** Explorer session state: current parameters clamped to the archive
 * bounds, selected variable and raster resolution. The UI never sends
 * an out-of-box request because every write goes through clampMu. */

import { Meta } from "./api.js";

export class ExplorerSession {
  mu: number[];
  variable: string;
  res: number;

  constructor(public meta: Meta, res = 128) {
    this.mu = meta.axes.map(({ bounds: [a, b] }) => (a + b) / 2);
    this.variable = meta.variables[0];
    this.res = res;
  }

  clampMu(mu: number[]): number[] {
    return this.meta.axes.map(({ bounds: [a, b] }, i) => {
      const v = mu[i];
      if (!Number.isFinite(v)) return (a + b) / 2;
      return Math.min(b, Math.max(a, v));
    });
  }

  setMu(mu: number[]): number[] {
    this.mu = this.clampMu(mu);
    return this.mu;
  }

  setAxis(i: number, value: number): number[] {
    const mu = this.mu.slice();
    mu[i] = value;
    return this.setMu(mu);
  }
}
