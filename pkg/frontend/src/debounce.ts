/** Debouncing and job supersession for live regeneration. */

export interface Debounced<A extends unknown[]> {
  (...args: A): void;
  cancel(): void;
  flush(): void;
}

/**
 * Trailing-edge debounce: the wrapped function runs once the calls have been
 * quiet for `waitMs`.  Used to hold regeneration until 300 ms after the last
 * slider release.
 */
export function debounce<A extends unknown[]>(fn: (...args: A) => void, waitMs = 300): Debounced<A> {
  let timer: ReturnType<typeof setTimeout> | null = null;
  let pending: A | null = null;

  const wrapped = (...args: A) => {
    pending = args;
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = null;
      const args2 = pending as A;
      pending = null;
      fn(...args2);
    }, waitMs);
  };
  wrapped.cancel = () => {
    if (timer !== null) clearTimeout(timer);
    timer = null;
    pending = null;
  };
  wrapped.flush = () => {
    if (timer === null) return;
    clearTimeout(timer);
    timer = null;
    const args = pending as A;
    pending = null;
    fn(...args);
  };
  return wrapped;
}

/**
 * Runs at most one async task at a time per panel.  Starting a new task
 * aborts the previous one's signal and discards its result, so a stale
 * render can never overwrite a newer one.
 */
export class SupersedingRunner {
  private ticket = 0;
  private controller: AbortController | null = null;

  /** True while a task is in flight. */
  get busy(): boolean {
    return this.controller !== null;
  }

  /**
   * Run `task`, superseding any in-flight run.  Resolves with the task's
   * result, or null if this run was itself superseded (or aborted) before
   * finishing.  Errors from stale runs are swallowed; errors from the
   * current run propagate.
   */
  async run<T>(task: (signal: AbortSignal) => Promise<T>): Promise<T | null> {
    const ticket = ++this.ticket;
    this.controller?.abort();
    const controller = new AbortController();
    this.controller = controller;
    try {
      const result = await task(controller.signal);
      // A task that ignored its abort signal still counts as superseded.
      return ticket === this.ticket && !controller.signal.aborted ? result : null;
    } catch (err) {
      if (ticket !== this.ticket || controller.signal.aborted) return null;
      throw err;
    } finally {
      if (ticket === this.ticket) this.controller = null;
    }
  }

  /** Abort the in-flight task, if any. */
  cancel(): void {
    this.controller?.abort();
    this.controller = null;
  }
}
