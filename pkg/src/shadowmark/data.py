"""Domain types: frame sequences, word timings, labels, utterance triplets.

All values are immutable after construction and validated eagerly, so a
constructed object can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

DEFAULT_HOP_MS = 10

FRAME_KINDS = ("source_s3r", "target_ppg", "synthetic")


@dataclass(frozen=True)
class FrameSequence:
    """Time-major feature matrix with a fixed hop.

    frames has shape (T, d) with T >= 1 frames of d >= 1 dimensions each.
    """

    frames: np.ndarray
    hop_ms: int = DEFAULT_HOP_MS
    kind: str = "synthetic"

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValidationError(f"frames must be a (T, d) matrix with T,d >= 1, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValidationError("frames contain non-finite values")
        if not isinstance(self.hop_ms, (int, np.integer)) or self.hop_ms <= 0:
            raise ValidationError(f"hop_ms must be a positive integer, got {self.hop_ms!r}")
        if self.kind not in FRAME_KINDS:
            raise ValidationError(f"kind must be one of {FRAME_KINDS}, got {self.kind!r}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "hop_ms", int(self.hop_ms))

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def duration_ms(self) -> int:
        return self.num_frames * self.hop_ms


@dataclass(frozen=True)
class WordTiming:
    """Half-open frame span [start_frame, end_frame) of one transcript word."""

    word: str
    start_frame: int
    end_frame: int

    def __post_init__(self):
        if self.start_frame < 0:
            raise ValidationError(f"start_frame must be >= 0, got {self.start_frame}")
        if self.start_frame >= self.end_frame:
            raise ValidationError(f"word {self.word!r}: start_frame {self.start_frame} >= end_frame {self.end_frame}")

    @property
    def num_frames(self) -> int:
        return self.end_frame - self.start_frame


def validate_timings(timings: list[WordTiming]) -> None:
    """Words must be ordered and non-overlapping (gaps allowed)."""
    for prev, cur in zip(timings, timings[1:]):
        if cur.start_frame < prev.end_frame:
            raise ValidationError(
                f"word timings overlap: {prev.word!r} ends at {prev.end_frame}, "
                f"{cur.word!r} starts at {cur.start_frame}"
            )


@dataclass(frozen=True)
class DLabel:
    """Per-frame binary disfluency/unintelligibility marks."""

    marks: np.ndarray
    hop_ms: int = DEFAULT_HOP_MS

    def __post_init__(self):
        marks = np.asarray(self.marks)
        if marks.ndim != 1 or marks.shape[0] < 1:
            raise ValidationError(f"marks must be a non-empty vector, got shape {marks.shape}")
        if not np.all(np.isin(marks, (0, 1))):
            raise ValidationError("marks must be binary")
        if not isinstance(self.hop_ms, (int, np.integer)) or self.hop_ms <= 0:
            raise ValidationError(f"hop_ms must be a positive integer, got {self.hop_ms!r}")
        marks = marks.astype(np.int8)
        marks.setflags(write=False)
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "hop_ms", int(self.hop_ms))

    def __len__(self) -> int:
        return self.marks.shape[0]


@dataclass(frozen=True)
class UtteranceTriplet:
    """Learner read-aloud plus the rater's two shadowing renditions.

    gold_dlabel (over l2_read) is only present for synthetic data, where the
    generator knows the true corrupted spans.
    """

    id: str
    l2_read: FrameSequence
    l1_shadow: FrameSequence
    l1_script_shadow: FrameSequence
    transcript: list[str]
    word_timings: list[WordTiming] = field(default_factory=list)
    gold_dlabel: DLabel | None = None

    def __post_init__(self):
        if not self.id:
            raise ValidationError("triplet id must be non-empty")
        if len(self.transcript) != len(self.word_timings):
            raise ValidationError(
                f"{self.id}: transcript has {len(self.transcript)} words but "
                f"{len(self.word_timings)} timings"
            )
        validate_timings(self.word_timings)
        if self.word_timings and self.word_timings[-1].end_frame > self.l2_read.num_frames:
            raise ValidationError(
                f"{self.id}: timings end at frame {self.word_timings[-1].end_frame} "
                f"but l2_read has {self.l2_read.num_frames} frames"
            )
        if self.gold_dlabel is not None and len(self.gold_dlabel) != self.l2_read.num_frames:
            raise ValidationError(
                f"{self.id}: gold_dlabel length {len(self.gold_dlabel)} != l2_read frames "
                f"{self.l2_read.num_frames}"
            )


@dataclass(frozen=True)
class ManifestEntry:
    """One corpus utterance: feature file paths plus transcript metadata."""

    id: str
    l2_read: str
    l1_shadow: str
    l1_script_shadow: str
    transcript: list[str]
    word_timings: list[tuple[int, int]]
    split: str
    gold_dlabel: str | None = None

    def __post_init__(self):
        if self.split not in ("train", "dev", "test"):
            raise ValidationError(f"{self.id}: split must be train/dev/test, got {self.split!r}")
        if len(self.transcript) != len(self.word_timings):
            raise ValidationError(f"{self.id}: transcript/word_timings length mismatch")


@dataclass(frozen=True)
class CorpusManifest:
    """Ordered, id-unique collection of manifest entries."""

    entries: list[ManifestEntry]

    def __post_init__(self):
        seen: set[str] = set()
        for e in self.entries:
            if e.id in seen:
                raise ValidationError(f"duplicate id in manifest: {e.id!r}")
            seen.add(e.id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def subset(self, split: str) -> "CorpusManifest":
        return CorpusManifest([e for e in self.entries if e.split == split])

    def ids(self) -> list[str]:
        return [e.id for e in self.entries]
