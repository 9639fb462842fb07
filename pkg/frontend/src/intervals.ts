import type { Interval } from "./types";

/** Sort intervals and merge any that overlap or touch. */
export function mergeIntervals(intervals: readonly Interval[]): Interval[] {
  const sorted = [...intervals].sort((a, b) => a[0] - b[0] || a[1] - b[1]);
  const out: [number, number][] = [];
  for (const [start, end] of sorted) {
    const last = out[out.length - 1];
    if (last !== undefined && start <= last[1]) {
      last[1] = Math.max(last[1], end);
    } else {
      out.push([start, end]);
    }
  }
  return out;
}

/** Merge one new interval into an already-normalized set. */
export function insertInterval(set: readonly Interval[], interval: Interval): Interval[] {
  return mergeIntervals([...set, interval]);
}

/**
 * Restrict an interval to [0, durationMs]. Returns null when nothing of it
 * survives (zero or negative length after clamping).
 */
export function clampInterval(interval: Interval, durationMs: number): Interval | null {
  const start = Math.max(0, interval[0]);
  const end = Math.min(durationMs, interval[1]);
  return start < end ? [start, end] : null;
}

export function isValidInterval(start: number, end: number, durationMs: number): boolean {
  return Number.isFinite(start) && Number.isFinite(end) && start >= 0 && start < end && end <= durationMs;
}
