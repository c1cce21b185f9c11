// Trailing-edge debouncer with injectable timers, so slider drags collapse
// into a handful of requests.

export type TimerHandle = unknown;

export interface Clock {
  set(fn: () => void, ms: number): TimerHandle;
  clear(handle: TimerHandle): void;
}

export const realClock: Clock = {
  set: (fn, ms) => setTimeout(fn, ms),
  clear: (handle) => clearTimeout(handle as ReturnType<typeof setTimeout>),
};

export class Debouncer<T> {
  private handle: TimerHandle | null = null;
  private last: T | undefined;

  constructor(
    private readonly waitMs: number,
    private readonly fire: (value: T) => void,
    private readonly clock: Clock = realClock,
  ) {}

  signal(value: T): void {
    this.last = value;
    if (this.handle !== null) {
      this.clock.clear(this.handle);
    }
    this.handle = this.clock.set(() => {
      this.handle = null;
      this.fire(this.last as T);
    }, this.waitMs);
  }

  cancel(): void {
    if (this.handle !== null) {
      this.clock.clear(this.handle);
      this.handle = null;
    }
  }
}

// Single-flight coalescer: at most one request in the air; values arriving
// while busy overwrite each other and only the newest is sent afterwards.
export class SingleFlight<T> {
  private busy = false;
  private queued: T | undefined;
  private hasQueued = false;

  constructor(private readonly run: (value: T) => Promise<void>) {}

  async want(value: T): Promise<void> {
    if (this.busy) {
      this.queued = value;
      this.hasQueued = true;
      return;
    }
    this.busy = true;
    try {
      await this.run(value);
    } finally {
      this.busy = false;
    }
    if (this.hasQueued) {
      const next = this.queued as T;
      this.hasQueued = false;
      this.queued = undefined;
      await this.want(next);
    }
  }
}
