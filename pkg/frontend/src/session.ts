import { insertInterval, isValidInterval, mergeIntervals } from "./intervals";
import type { Interval, KeyValueStore, TaskBundle } from "./types";

interface UtteranceState {
  intervals: Interval[];
  edited: boolean;
  completed: boolean;
}

interface SessionSnapshot {
  annotator_id: string;
  tasks: TaskBundle[];
  states: Record<string, { intervals: [number, number][]; edited: boolean; completed: boolean }>;
}

export interface SessionOptions {
  store?: KeyValueStore;
  storeKey?: string;
}

const DEFAULT_STORE_KEY = "shadowmark-annotator-session";

/**
 * All annotation state for one annotator working through a task list.
 * Every mutation re-normalizes the touched interval set and persists the
 * whole session, so a reloaded page resumes where the annotator left off.
 */
export class AnnotationSession {
  readonly annotatorId: string;
  readonly tasks: readonly TaskBundle[];
  private readonly states: Map<string, UtteranceState>;
  private readonly store: KeyValueStore | null;
  private readonly storeKey: string;

  private constructor(annotatorId: string, tasks: TaskBundle[], options: SessionOptions) {
    if (!annotatorId) {
      throw new Error("annotator id must be non-empty");
    }
    this.annotatorId = annotatorId;
    this.tasks = tasks;
    this.states = new Map(
      tasks.map((t) => [t.utterance_id, { intervals: [], edited: false, completed: false }]),
    );
    if (this.states.size !== tasks.length) {
      throw new Error("task list contains duplicate utterance ids");
    }
    this.store = options.store ?? null;
    this.storeKey = options.storeKey ?? DEFAULT_STORE_KEY;
  }

  static create(annotatorId: string, tasks: TaskBundle[], options: SessionOptions = {}): AnnotationSession {
    const session = new AnnotationSession(annotatorId, tasks, options);
    session.save();
    return session;
  }

  /** Rebuild a session from a persisted snapshot; null when none exists. */
  static resume(store: KeyValueStore, storeKey: string = DEFAULT_STORE_KEY): AnnotationSession | null {
    const raw = store.getItem(storeKey);
    if (raw === null) {
      return null;
    }
    const snap = JSON.parse(raw) as SessionSnapshot;
    const session = new AnnotationSession(snap.annotator_id, snap.tasks, { store, storeKey });
    for (const [utteranceId, state] of Object.entries(snap.states)) {
      const own = session.states.get(utteranceId);
      if (own === undefined) {
        continue; // stale entry from an older task list
      }
      own.intervals = mergeIntervals(state.intervals);
      own.edited = state.edited;
      own.completed = state.completed;
    }
    return session;
  }

  task(utteranceId: string): TaskBundle {
    const task = this.tasks.find((t) => t.utterance_id === utteranceId);
    if (task === undefined) {
      throw new Error(`unknown utterance id: ${utteranceId}`);
    }
    return task;
  }

  intervals(utteranceId: string): readonly Interval[] {
    return this.state(utteranceId).intervals;
  }

  edited(utteranceId: string): boolean {
    return this.state(utteranceId).edited;
  }

  completed(utteranceId: string): boolean {
    return this.state(utteranceId).completed;
  }

  /** Append one captured hold; overlapping or touching spans merge. */
  addHold(utteranceId: string, interval: Interval): void {
    const state = this.state(utteranceId);
    state.intervals = insertInterval(state.intervals, interval);
    this.save();
  }

  /**
   * Replace one interval with new bounds. Throws (state unchanged) when the
   * index or bounds are invalid; a resulting overlap merges.
   */
  editInterval(utteranceId: string, index: number, startMs: number, endMs: number): void {
    const state = this.state(utteranceId);
    const task = this.task(utteranceId);
    if (!Number.isInteger(index) || index < 0 || index >= state.intervals.length) {
      throw new Error(`no interval at index ${index}`);
    }
    if (!isValidInterval(startMs, endMs, task.duration_ms)) {
      throw new Error(`invalid bounds [${startMs}, ${endMs}] for duration ${task.duration_ms}`);
    }
    const rest = state.intervals.filter((_, i) => i !== index);
    state.intervals = insertInterval(rest, [startMs, endMs]);
    state.edited = true;
    this.save();
  }

  deleteInterval(utteranceId: string, index: number): void {
    const state = this.state(utteranceId);
    if (!Number.isInteger(index) || index < 0 || index >= state.intervals.length) {
      throw new Error(`no interval at index ${index}`);
    }
    state.intervals = state.intervals.filter((_, i) => i !== index);
    state.edited = true;
    this.save();
  }

  markComplete(utteranceId: string): void {
    this.state(utteranceId).completed = true;
    this.save();
  }

  private state(utteranceId: string): UtteranceState {
    const state = this.states.get(utteranceId);
    if (state === undefined) {
      throw new Error(`unknown utterance id: ${utteranceId}`);
    }
    return state;
  }

  snapshot(): SessionSnapshot {
    const states: SessionSnapshot["states"] = {};
    for (const [utteranceId, state] of this.states) {
      states[utteranceId] = {
        intervals: state.intervals.map(([s, e]) => [s, e]),
        edited: state.edited,
        completed: state.completed,
      };
    }
    return { annotator_id: this.annotatorId, tasks: [...this.tasks], states };
  }

  private save(): void {
    if (this.store !== null) {
      this.store.setItem(this.storeKey, JSON.stringify(this.snapshot()));
    }
  }
}
