/** DOM-free application controller.
 *
 * Owns the session state and the debounced latest-wins fetching; the
 * concrete rendering (canvas, sliders, text) is behind the AppView
 * interface so the controller can be tested against intercepted
 * traffic. All displayed numbers are handed to the view verbatim from
 * service responses.
 */

import {
  ApiClient,
  ApiError,
  EvaluateResponse,
  FieldResponse,
  Meta,
  SurfaceResponse,
} from "./api.js";
import { DebouncedFetcher } from "./debounce.js";
import { ExplorerSession } from "./state.js";

export interface AppView {
  showError(message: string): void;
  clearError(): void;
  setSliders(mu: number[]): void;
  renderField(field: FieldResponse): void;
  renderQois(result: EvaluateResponse): void;
  renderMeta(meta: Meta): void;
  renderSurface(surface: SurfaceResponse): void;
}

interface FieldArgs {
  mu: number[];
  variable: string;
  res: number;
}

export class ExplorerApp {
  session: ExplorerSession | null = null;
  private fetcher: DebouncedFetcher<FieldArgs, [FieldResponse, EvaluateResponse]>;

  constructor(
    private api: ApiClient,
    private view: AppView,
    delay = 150,
  ) {
    this.fetcher = new DebouncedFetcher(
      (args) => Promise.all([
        this.api.field(args.mu, args.variable, args.res),
        this.api.evaluate(args.mu),
      ]),
      (_args, [field, qois]) => {
        this.view.clearError();
        this.view.renderField(field);
        this.view.renderQois(qois);
      },
      (_args, err) => this.handleError(err),
      delay,
    );
  }

  /** Fetch metadata and populate the controls; false on failure. */
  async init(): Promise<boolean> {
    let meta: Meta;
    try {
      meta = await this.api.getMeta();
    } catch (err) {
      this.view.showError(`service unreachable: ${String(err)}`);
      return false;
    }
    this.session = new ExplorerSession(meta);
    this.view.clearError();
    this.view.renderMeta(meta);
    this.view.setSliders(this.session.mu);
    this.refresh();
    this.fetcher.flush();
    return true;
  }

  /** Slider movement on one axis (value clamped to the box). */
  setParameter(axis: number, value: number): void {
    if (!this.session) return;
    this.view.setSliders(this.session.setAxis(axis, value));
    this.refresh();
  }

  /** Jump to an exact parameter point (surface click). */
  commitMu(mu: number[]): void {
    if (!this.session) return;
    this.view.setSliders(this.session.setMu(mu));
    this.refresh();
    this.fetcher.flush();
  }

  setVariable(variable: string): void {
    if (!this.session) return;
    this.session.variable = variable;
    this.refresh();
    this.fetcher.flush();
  }

  refresh(): void {
    if (!this.session) return;
    this.fetcher.request({
      mu: this.session.mu.slice(),
      variable: this.session.variable,
      res: this.session.res,
    });
  }

  async requestSurface(qoi: string, grid: number[]): Promise<void> {
    try {
      this.view.renderSurface(await this.api.surface(qoi, grid));
    } catch (err) {
      this.handleError(err);
    }
  }

  private handleError(err: unknown): void {
    if (err instanceof ApiError && err.status === 422 && this.session) {
      // out-of-range parameters: snap back into the box and retry
      this.view.setSliders(this.session.setMu(this.session.mu));
      this.refresh();
      return;
    }
    this.view.showError(String(err));
  }
}
