/**
 * Simulated playback position over a fixed duration. There is no audio
 * decoding here; the tool animates a progress bar and timestamps capture
 * events, which is all the annotation protocol needs.
 */
export class PlaybackClock {
  readonly durationMs: number;
  readonly tickMs: number;
  private positionMs = 0;
  private timer: ReturnType<typeof setInterval> | null = null;
  private readonly listeners: ((positionMs: number) => void)[] = [];
  private readonly onEnd: () => void;

  constructor(durationMs: number, tickMs = 25, onEnd: () => void = () => undefined) {
    if (!(durationMs > 0) || !(tickMs > 0)) {
      throw new Error("duration and tick must be positive");
    }
    this.durationMs = durationMs;
    this.tickMs = tickMs;
    this.onEnd = onEnd;
  }

  get position(): number {
    return this.positionMs;
  }

  get playing(): boolean {
    return this.timer !== null;
  }

  onTick(listener: (positionMs: number) => void): void {
    this.listeners.push(listener);
  }

  play(): void {
    if (this.timer !== null || this.positionMs >= this.durationMs) {
      return;
    }
    this.timer = setInterval(() => this.advance(), this.tickMs);
  }

  pause(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  restart(): void {
    this.pause();
    this.positionMs = 0;
    this.emit();
  }

  private advance(): void {
    this.positionMs = Math.min(this.positionMs + this.tickMs, this.durationMs);
    this.emit();
    if (this.positionMs >= this.durationMs) {
      this.pause();
      this.onEnd();
    }
  }

  private emit(): void {
    for (const listener of this.listeners) {
      listener(this.positionMs);
    }
  }
}
