import { clampInterval } from "./intervals";
import type { Interval } from "./types";

export interface CaptureOptions {
  durationMs: number;
  /** Subtracted from press times to compensate human reaction delay. */
  reactionOffsetMs?: number;
  /** Called for ignorable misuse (e.g. release without a press). */
  onNotice?: (message: string) => void;
}

/**
 * Press/release state machine for one utterance's playback.
 *
 * Times come from the playback clock, so interval endpoints are accurate to
 * one clock tick. The reaction offset shifts starts earlier but never below
 * zero; ends are clamped to the media duration.
 */
export class HoldCapture {
  private readonly durationMs: number;
  private readonly reactionOffsetMs: number;
  private readonly onNotice: (message: string) => void;
  private pressedAt: number | null = null;

  constructor(options: CaptureOptions) {
    if (!(options.durationMs > 0)) {
      throw new Error(`media duration must be positive, got ${options.durationMs}`);
    }
    if (options.reactionOffsetMs !== undefined && options.reactionOffsetMs < 0) {
      throw new Error(`reaction offset must be >= 0, got ${options.reactionOffsetMs}`);
    }
    this.durationMs = options.durationMs;
    this.reactionOffsetMs = options.reactionOffsetMs ?? 0;
    this.onNotice = options.onNotice ?? (() => undefined);
  }

  get held(): boolean {
    return this.pressedAt !== null;
  }

  press(atMs: number): void {
    if (this.pressedAt !== null) {
      return; // key repeat while held: the first press wins
    }
    if (atMs >= this.durationMs) {
      this.onNotice("press after playback end ignored");
      return;
    }
    this.pressedAt = Math.max(0, atMs - this.reactionOffsetMs);
  }

  release(atMs: number): Interval | null {
    if (this.pressedAt === null) {
      this.onNotice("release without press ignored");
      return null;
    }
    const interval = clampInterval([this.pressedAt, atMs], this.durationMs);
    this.pressedAt = null;
    if (interval === null) {
      this.onNotice("zero-length hold ignored");
    }
    return interval;
  }

  /** Playback reached the end while the button was held. */
  closeAtEnd(): Interval | null {
    return this.pressedAt === null ? null : this.release(this.durationMs);
  }
}
