/** Debounced latest-wins request scheduler.
 *
 * Calls are coalesced: at most one underlying request is issued per
 * debounce window, and results of superseded requests are dropped so
 * the consumer only ever sees the response for the latest committed
 * arguments.
 */

export class DebouncedFetcher<A, R> {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private pendingArgs: A | null = null;
  private seq = 0;

  constructor(
    private fn: (args: A) => Promise<R>,
    private onResult: (args: A, result: R) => void,
    private onError: (args: A, err: unknown) => void = () => {},
    private delay = 100,
  ) {
    if (delay < 100) {
      throw new Error("debounce delay must be at least 100 ms");
    }
  }

  /** Schedule a request; an earlier unsent request is replaced. */
  request(args: A): void {
    this.pendingArgs = args;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => this.fire(), this.delay);
  }

  /** Issue the request immediately (still latest-wins). */
  flush(): void {
    if (this.pendingArgs !== null) {
      if (this.timer !== null) clearTimeout(this.timer);
      this.fire();
    }
  }

  private fire(): void {
    this.timer = null;
    const args = this.pendingArgs as A;
    this.pendingArgs = null;
    const ticket = ++this.seq;
    this.fn(args).then(
      (result) => {
        if (ticket === this.seq) this.onResult(args, result);
      },
      (err) => {
        if (ticket === this.seq) this.onError(args, err);
      },
    );
  }
}
