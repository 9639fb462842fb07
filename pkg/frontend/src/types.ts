/** A half-open annotated span in milliseconds: start < end. */
export type Interval = readonly [number, number];

/** One utterance to annotate, as bundled by the command-line exporter. */
export interface TaskBundle {
  utterance_id: string;
  media_url: string;
  duration_ms: number;
  transcript: string[];
}

export interface IntervalJson {
  start_ms: number;
  end_ms: number;
}

/** One exported record; the shape the evaluation toolkit imports. */
export interface AnnotationRecordJson {
  utterance_id: string;
  annotator_id: string;
  intervals: IntervalJson[];
  edited: boolean;
}

/** localStorage-compatible subset, injectable for tests and headless use. */
export interface KeyValueStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}
