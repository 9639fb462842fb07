"""Word- and frame-level scoring of unintelligibility predictions.

Word scores compare binary vectors positionally and micro-average over a
corpus by pooling counts. Frame accuracy compares marks one to one. Human
annotation exports arrive as millisecond intervals and are discretized by the
frame-midpoint rule before the usual word projection.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DLabel, WordTiming
from .dtw import DEFAULT_RHO_WORD, dlabel_frames_to_words
from .errors import ValidationError
from .fileio import read_dlabel, read_word_labels

logger = logging.getLogger(__name__)

# Annotation scores are worded at the word level below; the segment unit of
# the precision figure is a judgement call and is echoed in report headers.
SEGMENT_UNIT_NOTE = "annotation precision computed over word positions"


@dataclass(frozen=True)
class WordEvalResult:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValidationError("counts must be non-negative")
        expect = _prf(self.tp, self.fp, self.fn)
        if (self.precision, self.recall, self.f1) != expect:
            raise ValidationError("precision/recall/f1 inconsistent with counts")

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "WordEvalResult":
        precision, recall, f1 = _prf(tp, fp, fn)
        return cls(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall, f1=f1)


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def _as_binary_vector(v, name: str) -> np.ndarray:
    arr = np.asarray(v)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a vector")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValidationError(f"{name} must be binary")
    return arr.astype(np.int8)


def word_counts(predicted, gold) -> tuple[int, int, int]:
    p = _as_binary_vector(predicted, "predicted")
    g = _as_binary_vector(gold, "gold")
    if p.shape != g.shape:
        raise ValidationError(f"word vectors differ in length: {p.size} vs {g.size}")
    tp = int(((p == 1) & (g == 1)).sum())
    fp = int(((p == 1) & (g == 0)).sum())
    fn = int(((p == 0) & (g == 1)).sum())
    return tp, fp, fn


def word_prf(predicted, gold) -> WordEvalResult:
    """Positional word-level precision/recall/F1."""
    return WordEvalResult.from_counts(*word_counts(predicted, gold))


def frame_accuracy(predicted: DLabel, gold: DLabel) -> float:
    """Fraction of frames whose marks agree."""
    if len(predicted) != len(gold):
        raise ValidationError(f"label lengths differ: {len(predicted)} vs {len(gold)}")
    if predicted.hop_ms != gold.hop_ms:
        raise ValidationError("labels use different hops")
    return float((predicted.marks == gold.marks).mean())


@dataclass(frozen=True)
class AnnotationRecord:
    """One annotator's intervals for one utterance, milliseconds, normalized."""

    utterance_id: str
    annotator_id: str
    intervals: tuple[tuple[float, float], ...]
    edited: bool = False

    def __post_init__(self):
        for start, end in self.intervals:
            if not (0 <= start < end):
                raise ValidationError(f"utterance {self.utterance_id}: bad interval [{start}, {end}]")
        object.__setattr__(self, "intervals", merge_intervals(self.intervals))


def merge_intervals(intervals) -> tuple[tuple[float, float], ...]:
    """Sort and merge overlapping or touching [start, end] spans."""
    merged: list[list[float]] = []
    for start, end in sorted(intervals):
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return tuple((float(s), float(e)) for s, e in merged)


def load_annotation_export(path: str | Path) -> list[AnnotationRecord]:
    """Read the annotation tool's export: a JSON array of records."""
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if not isinstance(payload, list):
        raise ValidationError(f"{path}: annotation export must be a JSON array")
    records = []
    for item in payload:
        try:
            records.append(
                AnnotationRecord(
                    utterance_id=item["utterance_id"],
                    annotator_id=item["annotator_id"],
                    intervals=tuple((iv["start_ms"], iv["end_ms"]) for iv in item["intervals"]),
                    edited=bool(item.get("edited", False)),
                )
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"{path}: malformed annotation record: {exc}") from None
    return records


def annotation_to_frames(rec: AnnotationRecord, num_frames: int, hop_ms: int) -> DLabel:
    """Mark frame i iff its midpoint time falls inside an annotated interval."""
    duration_ms = num_frames * hop_ms
    marks = np.zeros(num_frames, dtype=np.int8)
    for start, end in rec.intervals:
        if start >= duration_ms:
            logger.warning("utterance %s: interval [%s, %s] past end %s ms, dropped", rec.utterance_id, start, end, duration_ms)
            continue
        if end > duration_ms:
            logger.warning("utterance %s: interval [%s, %s] clipped to %s ms", rec.utterance_id, start, end, duration_ms)
            end = duration_ms
        midpoints_in = (np.arange(num_frames) + 0.5) * hop_ms
        marks[(midpoints_in >= start) & (midpoints_in < end)] = 1
    return DLabel(marks=marks, hop_ms=hop_ms)


def annotation_to_words(
    rec: AnnotationRecord,
    timings: tuple[WordTiming, ...],
    hop_ms: int,
    rho_word: float = DEFAULT_RHO_WORD,
    num_frames: int | None = None,
) -> np.ndarray:
    if num_frames is None:
        num_frames = timings[-1].end_frame if timings else 0
    label = annotation_to_frames(rec, num_frames, hop_ms)
    return dlabel_frames_to_words(label, timings, rho_word)


@dataclass(frozen=True)
class AnnotationPrecision:
    precision: float
    tp: int
    fp: int
    vacuous: bool  # true when there were no predicted positives at all


def annotation_precision(predicted, annotated) -> AnnotationPrecision:
    """Share of predicted word positions the annotator also marked."""
    tp, fp, _ = word_counts(predicted, annotated)
    vacuous = tp + fp == 0
    return AnnotationPrecision(
        precision=0.0 if vacuous else tp / (tp + fp),
        tp=tp,
        fp=fp,
        vacuous=vacuous,
    )


@dataclass(frozen=True)
class MethodRow:
    method: str
    word: WordEvalResult
    frame_accuracy: float | None
    utterances: int


def _load_word_file(directory: Path, utt_id: str) -> np.ndarray:
    path = directory / f"{utt_id}.words.json"
    file_id, words = read_word_labels(path)
    if file_id != utt_id:
        raise ValidationError(f"{path}: id {file_id!r} does not match file name")
    return words


def evaluate_method(method: str, pred_dir: Path, gold_dir: Path, ids: list[str]) -> MethodRow:
    """Pool word counts over utterances; average frame accuracy when present."""
    missing = [u for u in ids if not (pred_dir / f"{u}.words.json").exists()]
    if missing:
        raise ValidationError(f"method {method}: missing predictions for ids: {', '.join(missing)}")
    tp = fp = fn = 0
    accs = []
    have_all_frames = True
    for utt_id in ids:
        pred = _load_word_file(pred_dir, utt_id)
        gold = _load_word_file(gold_dir, utt_id)
        dtp, dfp, dfn = word_counts(pred, gold)
        tp, fp, fn = tp + dtp, fp + dfp, fn + dfn
        pred_frames = pred_dir / f"{utt_id}.dlabel.json"
        gold_frames = gold_dir / f"{utt_id}.dlabel.json"
        if pred_frames.exists() and gold_frames.exists():
            accs.append(frame_accuracy(read_dlabel(pred_frames)[1], read_dlabel(gold_frames)[1]))
        else:
            have_all_frames = False
    return MethodRow(
        method=method,
        word=WordEvalResult.from_counts(tp, fp, fn),
        frame_accuracy=float(np.mean(accs)) if accs and have_all_frames else None,
        utterances=len(ids),
    )


def evaluate_corpus(ids: list[str], predictions_root: str | Path, gold_dir: str | Path) -> dict:
    """Score every method directory under predictions_root against gold labels.

    Returns the report record: header notes plus one row per method, with
    micro-averaged word counts and mean frame accuracy where frame labels
    exist on both sides.
    """
    predictions_root = Path(predictions_root)
    gold_dir = Path(gold_dir)
    if not ids:
        raise ValidationError("no utterance ids to evaluate")
    missing_gold = [u for u in ids if not (gold_dir / f"{u}.words.json").exists()]
    if missing_gold:
        raise ValidationError(f"missing gold labels for ids: {', '.join(missing_gold)}")
    methods = sorted(p.name for p in predictions_root.iterdir() if p.is_dir())
    if not methods:
        raise ValidationError(f"no method directories under {predictions_root}")
    rows = [evaluate_method(m, predictions_root / m, gold_dir, ids) for m in methods]
    return {
        "note": SEGMENT_UNIT_NOTE,
        "num_utterances": len(ids),
        "rows": [
            {
                "method": row.method,
                "f1": row.word.f1,
                "precision": row.word.precision,
                "recall": row.word.recall,
                "frame_accuracy": row.frame_accuracy,
                "tp": row.word.tp,
                "fp": row.word.fp,
                "fn": row.word.fn,
                "utterances": row.utterances,
            }
            for row in rows
        ],
    }


def _pct(value: float | None) -> str:
    return "---" if value is None else f"{100.0 * value:.1f}"


def render_report_text(report: dict) -> str:
    """Aligned table: one row per method, percentages to one decimal."""
    headers = ["method", "F1", "Prec.", "Rec.", "Frame Acc."]
    body = [
        [row["method"], _pct(row["f1"]), _pct(row["precision"]), _pct(row["recall"]), _pct(row["frame_accuracy"])]
        for row in report["rows"]
    ]
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h) for i, h in enumerate(headers)]
    lines = [f"# {report['note']}"]
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip())
    lines.append("  ".join("-" * widths[i] for i in range(len(headers))))
    for r in body:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(len(headers))).rstrip())
    if "annotation_rows" in report:
        lines.append("")
        lines.append("annotator precision (word positions):")
        for row in report["annotation_rows"]:
            flag = "  [no predicted positives]" if row["vacuous"] else ""
            lines.append(f"  {row['method']} vs {row['annotator_id']}: {_pct(row['precision'])}{flag}")
    return "\n".join(lines) + "\n"


def add_annotation_rows(
    report: dict,
    ids: list[str],
    predictions_root: str | Path,
    annotation_words: dict[str, dict[str, np.ndarray]],
) -> dict:
    """Extend a report with pooled per-annotator precision for each method.

    annotation_words maps annotator_id -> utterance_id -> binary word vector.
    Utterances an annotator did not cover are skipped for that annotator.
    """
    predictions_root = Path(predictions_root)
    rows = []
    for row in report["rows"]:
        method = row["method"]
        for annotator_id in sorted(annotation_words):
            covered = [u for u in ids if u in annotation_words[annotator_id]]
            tp = fp = 0
            for utt_id in covered:
                pred = _load_word_file(predictions_root / method, utt_id)
                dtp, dfp, _ = word_counts(pred, annotation_words[annotator_id][utt_id])
                tp, fp = tp + dtp, fp + dfp
            vacuous = tp + fp == 0
            rows.append(
                {
                    "method": method,
                    "annotator_id": annotator_id,
                    "precision": 0.0 if vacuous else tp / (tp + fp),
                    "vacuous": vacuous,
                    "utterances": len(covered),
                }
            )
    out = dict(report)
    out["annotation_rows"] = rows
    return out
