import { HoldCapture } from "./capture";
import { exportSession } from "./exporter";
import { PlaybackClock } from "./playback";
import { AnnotationSession } from "./session";
import type { TaskBundle } from "./types";

const REACTION_OFFSET_KEY = "shadowmark-annotator-reaction-offset";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

let session: AnnotationSession | null = null;
let currentId: string | null = null;
let clock: PlaybackClock | null = null;
let capture: HoldCapture | null = null;

function reactionOffsetMs(): number {
  const raw = localStorage.getItem(REACTION_OFFSET_KEY);
  const value = raw === null ? 0 : Number(raw);
  return Number.isFinite(value) && value >= 0 ? value : 0;
}

function notice(message: string): void {
  const box = el<HTMLDivElement>("notice");
  box.textContent = message;
  box.hidden = message === "";
}

function renderTaskList(): void {
  if (session === null) return;
  const list = el<HTMLUListElement>("task-list");
  list.innerHTML = "";
  for (const task of session.tasks) {
    const item = document.createElement("li");
    const button = document.createElement("button");
    const count = session.intervals(task.utterance_id).length;
    const done = session.completed(task.utterance_id) ? " ✓" : "";
    button.textContent = `${task.utterance_id} (${count} span${count === 1 ? "" : "s"})${done}`;
    button.onclick = () => selectTask(task.utterance_id);
    if (task.utterance_id === currentId) {
      button.classList.add("current");
    }
    item.appendChild(button);
    list.appendChild(item);
  }
}

function renderIntervals(): void {
  if (session === null || currentId === null) return;
  const utteranceId = currentId;
  const container = el<HTMLDivElement>("intervals");
  container.innerHTML = "";
  session.intervals(utteranceId).forEach(([start, end], index) => {
    const row = document.createElement("div");
    row.className = "interval-row";
    const startInput = document.createElement("input");
    startInput.type = "number";
    startInput.value = String(start);
    const endInput = document.createElement("input");
    endInput.type = "number";
    endInput.value = String(end);
    const apply = document.createElement("button");
    apply.textContent = "apply";
    apply.onclick = () => {
      try {
        session!.editInterval(utteranceId, index, Number(startInput.value), Number(endInput.value));
        notice("");
      } catch (err) {
        notice(String(err instanceof Error ? err.message : err));
      }
      refresh();
    };
    const remove = document.createElement("button");
    remove.textContent = "delete";
    remove.onclick = () => {
      session!.deleteInterval(utteranceId, index);
      refresh();
    };
    row.append(startInput, " – ", endInput, " ms ", apply, remove);
    container.appendChild(row);
  });
}

function renderTask(): void {
  if (session === null || currentId === null) return;
  const task = session.task(currentId);
  el<HTMLHeadingElement>("task-title").textContent = task.utterance_id;
  el<HTMLSpanElement>("media-ref").textContent = task.media_url;
  const transcript = el<HTMLParagraphElement>("transcript");
  transcript.textContent = task.transcript.join(" ");
  transcript.hidden = !el<HTMLInputElement>("show-transcript").checked;
  updateProgress(clock?.position ?? 0);
  renderIntervals();
}

function updateProgress(positionMs: number): void {
  if (session === null || currentId === null) return;
  const task = session.task(currentId);
  const fraction = Math.min(1, positionMs / task.duration_ms);
  el<HTMLDivElement>("progress-fill").style.width = `${(fraction * 100).toFixed(1)}%`;
  el<HTMLSpanElement>("position").textContent = `${Math.round(positionMs)} / ${task.duration_ms} ms`;
}

function selectTask(utteranceId: string): void {
  if (session === null) return;
  clock?.pause();
  currentId = utteranceId;
  const task = session.task(utteranceId);
  clock = new PlaybackClock(task.duration_ms, 25, () => {
    const interval = capture?.closeAtEnd() ?? null;
    if (interval !== null) {
      session!.addHold(utteranceId, interval);
    }
    session!.markComplete(utteranceId);
    refresh();
  });
  clock.onTick(updateProgress);
  capture = new HoldCapture({
    durationMs: task.duration_ms,
    reactionOffsetMs: reactionOffsetMs(),
    onNotice: notice,
  });
  notice("");
  refresh();
}

function refresh(): void {
  renderTaskList();
  renderTask();
}

function bindControls(): void {
  el<HTMLButtonElement>("play").onclick = () => clock?.play();
  el<HTMLButtonElement>("pause").onclick = () => clock?.pause();
  el<HTMLButtonElement>("restart").onclick = () => clock?.restart();
  el<HTMLInputElement>("show-transcript").onchange = renderTask;

  const offsetInput = el<HTMLInputElement>("reaction-offset");
  offsetInput.value = String(reactionOffsetMs());
  offsetInput.onchange = () => {
    const value = Math.max(0, Number(offsetInput.value) || 0);
    localStorage.setItem(REACTION_OFFSET_KEY, String(value));
    offsetInput.value = String(value);
    if (currentId !== null) selectTask(currentId); // rebuild capture with the new offset
  };

  const holdButton = el<HTMLButtonElement>("hold");
  holdButton.onpointerdown = () => {
    if (clock === null || capture === null || !clock.playing) {
      notice("press ignored: playback not running");
      return;
    }
    capture.press(clock.position);
  };
  const endHold = () => {
    if (clock === null || capture === null || currentId === null || !capture.held) return;
    const interval = capture.release(clock.position);
    if (interval !== null) {
      session!.addHold(currentId, interval);
      refresh();
    }
  };
  holdButton.onpointerup = endHold;
  holdButton.onpointerleave = endHold;

  el<HTMLButtonElement>("export").onclick = () => {
    if (session === null) return;
    const blob = new Blob([exportSession(session)], { type: "application/json" });
    const link = document.createElement("a");
    link.href = URL.createObjectURL(blob);
    link.download = `annotations-${session.annotatorId}.json`;
    link.click();
    URL.revokeObjectURL(link.href);
  };

  el<HTMLInputElement>("task-file").onchange = async (event) => {
    const input = event.target as HTMLInputElement;
    const file = input.files?.[0];
    if (file === undefined) return;
    const annotatorId = el<HTMLInputElement>("annotator-id").value.trim();
    if (annotatorId === "") {
      notice("enter an annotator id before loading tasks");
      return;
    }
    const tasks = JSON.parse(await file.text()) as TaskBundle[];
    session = AnnotationSession.create(annotatorId, tasks, { store: localStorage });
    currentId = null;
    notice("");
    refresh();
  };
}

function boot(): void {
  bindControls();
  const resumed = AnnotationSession.resume(localStorage);
  if (resumed !== null) {
    session = resumed;
    el<HTMLInputElement>("annotator-id").value = resumed.annotatorId;
    refresh();
    notice("resumed a saved session");
  }
}

boot();
