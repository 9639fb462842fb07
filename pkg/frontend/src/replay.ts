import { HoldCapture } from "./capture";
import { AnnotationSession } from "./session";
import type { TaskBundle } from "./types";

export interface HoldEvent {
  utterance_id: string;
  press_ms: number;
  /** null: playback ended while the button was still held. */
  release_ms: number | null;
}

export interface EditEvent {
  utterance_id: string;
  index: number;
  start_ms: number;
  end_ms: number;
}

export interface DeleteEvent {
  utterance_id: string;
  index: number;
}

/** A scripted annotation pass: what a human would have done, as data. */
export interface CaptureScript {
  annotator_id: string;
  reaction_offset_ms: number;
  tick_ms: number;
  tasks: TaskBundle[];
  holds: HoldEvent[];
  edits?: EditEvent[];
  deletes?: DeleteEvent[];
}

/**
 * Drive a fresh session through a scripted sequence of holds and edits.
 * Used by tests and by the fixture generator; the browser app performs the
 * same calls from real pointer events.
 */
export function replayCaptureScript(script: CaptureScript): AnnotationSession {
  const session = AnnotationSession.create(script.annotator_id, script.tasks);
  const captures = new Map(
    script.tasks.map((task) => [
      task.utterance_id,
      new HoldCapture({ durationMs: task.duration_ms, reactionOffsetMs: script.reaction_offset_ms }),
    ]),
  );
  for (const hold of script.holds) {
    const capture = captures.get(hold.utterance_id);
    if (capture === undefined) {
      throw new Error(`hold for unknown utterance id: ${hold.utterance_id}`);
    }
    capture.press(hold.press_ms);
    const interval = hold.release_ms === null ? capture.closeAtEnd() : capture.release(hold.release_ms);
    if (interval !== null) {
      session.addHold(hold.utterance_id, interval);
    }
  }
  for (const edit of script.edits ?? []) {
    session.editInterval(edit.utterance_id, edit.index, edit.start_ms, edit.end_ms);
  }
  for (const del of script.deletes ?? []) {
    session.deleteInterval(del.utterance_id, del.index);
  }
  return session;
}
