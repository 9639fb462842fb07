import type { AnnotationSession } from "./session";
import type { AnnotationRecordJson } from "./types";

/** One record per task in task-list order, whatever its completion state. */
export function sessionRecords(session: AnnotationSession): AnnotationRecordJson[] {
  return session.tasks.map((task) => ({
    utterance_id: task.utterance_id,
    annotator_id: session.annotatorId,
    intervals: session.intervals(task.utterance_id).map(([start, end]) => ({
      start_ms: start,
      end_ms: end,
    })),
    edited: session.edited(task.utterance_id),
  }));
}

/**
 * Serialize the session for the evaluation toolkit. Pure function of the
 * session state: the same state always yields the same bytes.
 */
export function exportSession(session: AnnotationSession): string {
  return JSON.stringify(sessionRecords(session), null, 2) + "\n";
}
