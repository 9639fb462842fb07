"""On-disk formats: FSEQ feature files, JSON-lines manifests, label JSON.

FSEQ layout (all integers little-endian):

    magic "FSEQ" | u32 version=1 | u32 T | u32 d | u32 hop_ms
    | u8 kind-code | 3 zero bytes | T*d float32, frame-major

Manifest files are JSON-lines, one utterance per line; label files are plain
JSON. Feature and label paths inside a manifest are resolved relative to the
manifest's directory.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .data import CorpusManifest, DLabel, FrameSequence, ManifestEntry, UtteranceTriplet, WordTiming
from .errors import FormatError, ManifestParseError, ValidationError

FSEQ_MAGIC = b"FSEQ"
FSEQ_VERSION = 1
_HEADER = struct.Struct("<4sIIIIB3x")

_KIND_CODES = {"source_s3r": 0, "target_ppg": 1, "synthetic": 2}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


def write_frames(seq: FrameSequence, path: str | Path) -> None:
    """Serialize a FrameSequence; identical inputs produce identical bytes."""
    frames = np.ascontiguousarray(seq.frames, dtype="<f4")
    if not np.all(np.isfinite(frames)):
        raise ValidationError("refusing to write non-finite frames")
    header = _HEADER.pack(
        FSEQ_MAGIC, FSEQ_VERSION, seq.num_frames, seq.dim, seq.hop_ms, _KIND_CODES[seq.kind]
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(frames.tobytes())


def read_frames(path: str | Path) -> FrameSequence:
    """Read an FSEQ file back into a FrameSequence, bit-exact."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than FSEQ header")
    magic, version, t, d, hop_ms, kind_code = _HEADER.unpack_from(raw)
    if magic != FSEQ_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FSEQ_VERSION:
        raise FormatError(f"{path}: unsupported FSEQ version {version}")
    if kind_code not in _CODE_KINDS:
        raise FormatError(f"{path}: unknown kind code {kind_code}")
    payload = raw[_HEADER.size:]
    expected = t * d * 4
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expected} (T={t}, d={d})")
    frames = np.frombuffer(payload, dtype="<f4").reshape(t, d)
    return FrameSequence(frames=frames, hop_ms=hop_ms, kind=_CODE_KINDS[kind_code])


_REQUIRED_FIELDS = ("id", "l2_read", "l1_shadow", "l1_script_shadow", "transcript", "word_timings", "split")


def _entry_from_record(record: dict, line_no: int) -> ManifestEntry:
    for field in _REQUIRED_FIELDS:
        if field not in record:
            raise ManifestParseError(line_no, f"missing field {field!r}")
    try:
        timings = [(int(s), int(e)) for s, e in record["word_timings"]]
    except (TypeError, ValueError) as exc:
        raise ManifestParseError(line_no, f"bad word_timings: {exc}") from exc
    try:
        return ManifestEntry(
            id=record["id"],
            l2_read=record["l2_read"],
            l1_shadow=record["l1_shadow"],
            l1_script_shadow=record["l1_script_shadow"],
            transcript=list(record["transcript"]),
            word_timings=timings,
            split=record["split"],
            gold_dlabel=record.get("gold_dlabel"),
        )
    except ValidationError as exc:
        raise ManifestParseError(line_no, str(exc)) from exc


def load_manifest(path: str | Path, check_files: bool = True) -> CorpusManifest:
    """Load and validate a JSON-lines manifest.

    With check_files (the default), every referenced feature/label file must
    exist; a dangling path raises ValidationError naming the entry id.
    """
    path = Path(path)
    entries: list[ManifestEntry] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestParseError(line_no, f"invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise ManifestParseError(line_no, "entry is not a JSON object")
            entries.append(_entry_from_record(record, line_no))
    manifest = CorpusManifest(entries)
    if check_files:
        base = path.parent
        for e in manifest:
            refs = [e.l2_read, e.l1_shadow, e.l1_script_shadow]
            if e.gold_dlabel is not None:
                refs.append(e.gold_dlabel)
            for ref in refs:
                if not (base / ref).exists():
                    raise ValidationError(f"entry {e.id!r}: referenced file {ref!r} does not exist")
    return manifest


def write_manifest(manifest: CorpusManifest, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in manifest:
            record = {
                "id": e.id,
                "l2_read": e.l2_read,
                "l1_shadow": e.l1_shadow,
                "l1_script_shadow": e.l1_script_shadow,
                "transcript": e.transcript,
                "word_timings": [[s, t] for s, t in e.word_timings],
                "split": e.split,
            }
            if e.gold_dlabel is not None:
                record["gold_dlabel"] = e.gold_dlabel
            f.write(json.dumps(record, sort_keys=True) + "\n")


def load_triplet(entry: ManifestEntry, base_dir: str | Path) -> UtteranceTriplet:
    """Materialize a manifest entry by reading its feature files."""
    base = Path(base_dir)
    gold = None
    if entry.gold_dlabel is not None:
        gold = read_dlabel(base / entry.gold_dlabel)[1]
    return UtteranceTriplet(
        id=entry.id,
        l2_read=read_frames(base / entry.l2_read),
        l1_shadow=read_frames(base / entry.l1_shadow),
        l1_script_shadow=read_frames(base / entry.l1_script_shadow),
        transcript=list(entry.transcript),
        word_timings=[
            WordTiming(word=w, start_frame=s, end_frame=t)
            for w, (s, t) in zip(entry.transcript, entry.word_timings)
        ],
        gold_dlabel=gold,
    )


def write_dlabel(utt_id: str, label: DLabel, path: str | Path) -> None:
    payload = {"id": utt_id, "hop_ms": label.hop_ms, "marks": [int(m) for m in label.marks]}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)
        f.write("\n")


def read_dlabel(path: str | Path) -> tuple[str, DLabel]:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    for field in ("id", "hop_ms", "marks"):
        if field not in payload:
            raise FormatError(f"{path}: label file missing field {field!r}")
    return payload["id"], DLabel(marks=np.asarray(payload["marks"]), hop_ms=payload["hop_ms"])


def write_word_labels(utt_id: str, words: np.ndarray, path: str | Path) -> None:
    payload = {"id": utt_id, "words": [int(w) for w in words]}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)
        f.write("\n")


def read_word_labels(path: str | Path) -> tuple[str, np.ndarray]:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    for field in ("id", "words"):
        if field not in payload:
            raise FormatError(f"{path}: word label file missing field {field!r}")
    words = np.asarray(payload["words"], dtype=np.int8)
    if words.size and not np.all(np.isin(words, (0, 1))):
        raise FormatError(f"{path}: word labels must be binary")
    return payload["id"], words
