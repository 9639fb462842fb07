"""Two-stage shadowing label pipeline.

Stage one warps the rater's free shadow onto the script-shadow and thresholds
the local alignment cost to find breakdown steps; stage two warps the
script-shadow onto the learner's read-aloud speech to carry the marks over.
A coverage rule then lifts frame marks to word marks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DLabel, FrameSequence, UtteranceTriplet, WordTiming, validate_timings
from .errors import ValidationError

METRICS = ("euclidean", "cosine_distance")

DEFAULT_RHO_WORD = 0.5


@dataclass(frozen=True)
class WarpPath:
    """Monotone contiguous alignment between sequences A and B.

    steps are 1-based (i, j) pairs from (1, 1) to (T_A, T_B); each step
    advances i and/or j by one. step_costs[k] is the local cost at steps[k].
    """

    steps: list[tuple[int, int]]
    step_costs: np.ndarray

    def __post_init__(self):
        if not self.steps:
            raise ValidationError("path has no steps")
        costs = np.asarray(self.step_costs, dtype=np.float64)
        if costs.shape != (len(self.steps),):
            raise ValidationError("step_costs length must match steps")
        if np.any(costs < 0) or not np.all(np.isfinite(costs)):
            raise ValidationError("step costs must be finite and non-negative")
        if self.steps[0] != (1, 1):
            raise ValidationError(f"path must start at (1, 1), got {self.steps[0]}")
        for (i0, j0), (i1, j1) in zip(self.steps, self.steps[1:]):
            di, dj = i1 - i0, j1 - j0
            if di not in (0, 1) or dj not in (0, 1) or (di, dj) == (0, 0):
                raise ValidationError(f"non-monotone step from ({i0},{j0}) to ({i1},{j1})")
        costs.setflags(write=False)
        object.__setattr__(self, "step_costs", costs)

    @property
    def len_a(self) -> int:
        return self.steps[-1][0]

    @property
    def len_b(self) -> int:
        return self.steps[-1][1]

    @property
    def total_cost(self) -> float:
        return float(self.step_costs.sum())


@dataclass(frozen=True)
class ThresholdPolicy:
    """How step costs are turned into breakdown marks.

    absolute: mark steps whose smoothed cost exceeds `value`.
    percentile: mark steps above the value-th percentile of the utterance's
    own smoothed costs (robust to corpus-scale cost shifts).
    """

    mode: str = "percentile"
    value: float = 85.0
    smooth_window: int = 5

    def __post_init__(self):
        if self.mode not in ("absolute", "percentile"):
            raise ValidationError(f"unknown threshold mode {self.mode!r}")
        if self.mode == "percentile" and not (0.0 < self.value < 100.0):
            raise ValidationError(f"percentile value must be in (0, 100), got {self.value}")
        if self.smooth_window < 1 or self.smooth_window % 2 == 0:
            raise ValidationError(f"smooth_window must be an odd positive integer, got {self.smooth_window}")


def local_cost_matrix(a: np.ndarray, b: np.ndarray, metric: str) -> np.ndarray:
    """Pairwise frame costs, shape (T_a, T_b), always >= 0.

    Costs within rounding error of zero are snapped to exactly zero, so
    identical frames cost 0 under both metrics and downstream thresholding
    never fires on numerical dust.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if metric == "euclidean":
        sa = np.sum(a * a, axis=1)
        sb = np.sum(b * b, axis=1)
        sq = sa[:, None] + sb[None, :] - 2.0 * (a @ b.T)
        scale = sa[:, None] + sb[None, :]
        sq[sq <= 1e-12 * scale] = 0.0
        return np.sqrt(np.maximum(sq, 0.0))
    if metric == "cosine_distance":
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        denom = na[:, None] * nb[None, :]
        sim = np.divide(a @ b.T, denom, out=np.zeros((a.shape[0], b.shape[0])), where=denom > 0)
        cost = np.maximum(1.0 - sim, 0.0)
        cost[cost <= 1e-12] = 0.0
        return cost
    raise ValidationError(f"unknown metric {metric!r}; expected one of {METRICS}")


def dtw_align(a: FrameSequence, b: FrameSequence, metric: str = "cosine_distance") -> WarpPath:
    """Minimum-total-cost monotone path under steps {(1,0),(0,1),(1,1)}.

    Backtrace ties prefer (1,1) over (1,0) over (0,1). The accumulation runs
    over anti-diagonals so the quadratic DP stays vectorized.
    """
    if a.dim != b.dim:
        raise ValidationError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.hop_ms != b.hop_ms:
        raise ValidationError(f"hop mismatch: {a.hop_ms} vs {b.hop_ms}")
    cost = local_cost_matrix(a.frames, b.frames, metric)
    ta, tb = cost.shape

    acc = np.full((ta + 1, tb + 1), np.inf)
    acc[1, 1] = cost[0, 0]
    for s in range(1, ta + tb - 1):
        i = np.arange(max(0, s - (tb - 1)), min(ta - 1, s) + 1)
        j = s - i
        best = np.minimum(np.minimum(acc[i, j], acc[i, j + 1]), acc[i + 1, j])
        acc[i + 1, j + 1] = cost[i, j] + best

    i, j = ta - 1, tb - 1
    rev: list[tuple[int, int]] = [(i, j)]
    while (i, j) != (0, 0):
        diag, up, left = acc[i, j], acc[i, j + 1], acc[i + 1, j]
        best = min(diag, up, left)
        if diag == best:
            i, j = i - 1, j - 1
        elif up == best:
            i = i - 1
        else:
            j = j - 1
        rev.append((i, j))
    rev.reverse()
    steps = [(pi + 1, pj + 1) for pi, pj in rev]
    return WarpPath(steps=steps, step_costs=np.array([cost[pi, pj] for pi, pj in rev]))


def _smooth(costs: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average, truncated at the edges."""
    if window == 1:
        return costs.astype(np.float64)
    r = window // 2
    n = costs.shape[0]
    csum = np.concatenate(([0.0], np.cumsum(costs, dtype=np.float64)))
    lo = np.maximum(np.arange(n) - r, 0)
    hi = np.minimum(np.arange(n) + r + 1, n)
    return (csum[hi] - csum[lo]) / (hi - lo)


def derive_dlabel(path: WarpPath, policy: ThresholdPolicy, hop_ms: int = 10) -> tuple[DLabel, DLabel]:
    """Threshold smoothed step costs into marks on both sides of the path.

    A frame is marked when any step above threshold touches it.
    """
    smoothed = _smooth(path.step_costs, policy.smooth_window)
    if policy.mode == "absolute":
        theta = policy.value
    else:
        theta = float(np.percentile(smoothed, policy.value))
    hot = smoothed > theta
    marks_a = np.zeros(path.len_a, dtype=np.int8)
    marks_b = np.zeros(path.len_b, dtype=np.int8)
    for (i, j), h in zip(path.steps, hot):
        if h:
            marks_a[i - 1] = 1
            marks_b[j - 1] = 1
    return DLabel(marks_a, hop_ms=hop_ms), DLabel(marks_b, hop_ms=hop_ms)


def transfer_dlabel(source_label: DLabel, path: WarpPath) -> DLabel:
    """Carry side-A marks over to side B along the path.

    A target frame is marked only if some aligned source frame is marked, so
    no marks are ever created out of thin air.
    """
    if len(source_label) != path.len_a:
        raise ValidationError(
            f"source label has {len(source_label)} frames but path side A has {path.len_a}"
        )
    marks = np.zeros(path.len_b, dtype=np.int8)
    src = source_label.marks
    for i, j in path.steps:
        if src[i - 1]:
            marks[j - 1] = 1
    return DLabel(marks, hop_ms=source_label.hop_ms)


def dlabel_frames_to_words(
    label: DLabel, timings: list[WordTiming], rho_word: float = DEFAULT_RHO_WORD
) -> np.ndarray:
    """Mark word w when >= rho_word of its frames are marked."""
    if not (0.0 < rho_word <= 1.0):
        raise ValidationError(f"rho_word must be in (0, 1], got {rho_word}")
    validate_timings(timings)
    if timings and timings[-1].end_frame > len(label):
        raise ValidationError(
            f"label has {len(label)} frames but timings extend to {timings[-1].end_frame}"
        )
    words = np.zeros(len(timings), dtype=np.int8)
    for w, t in enumerate(timings):
        covered = int(label.marks[t.start_frame:t.end_frame].sum())
        if covered / t.num_frames >= rho_word:
            words[w] = 1
    return words


@dataclass(frozen=True)
class TripletLabels:
    """All labels the two-stage pipeline produces for one triplet."""

    read: DLabel  # over l2_read (transferred)
    shadow: DLabel  # over l1_shadow (stage-one, A side)
    script_shadow: DLabel  # over l1_script_shadow (stage-one, B side)
    words: np.ndarray


def label_triplet_full(
    t: UtteranceTriplet,
    metric: str = "cosine_distance",
    policy: ThresholdPolicy | None = None,
    rho_word: float = DEFAULT_RHO_WORD,
) -> TripletLabels:
    """Run both DTW stages and the word conversion for one triplet."""
    policy = policy or ThresholdPolicy()
    stage_one = dtw_align(t.l1_shadow, t.l1_script_shadow, metric)
    shadow_label, script_label = derive_dlabel(stage_one, policy, hop_ms=t.l1_shadow.hop_ms)
    stage_two = dtw_align(t.l1_script_shadow, t.l2_read, metric)
    read_label = transfer_dlabel(script_label, stage_two)
    words = dlabel_frames_to_words(read_label, t.word_timings, rho_word)
    return TripletLabels(read=read_label, shadow=shadow_label, script_shadow=script_label, words=words)


def label_triplet(
    t: UtteranceTriplet,
    metric: str = "cosine_distance",
    policy: ThresholdPolicy | None = None,
    rho_word: float = DEFAULT_RHO_WORD,
) -> tuple[DLabel, np.ndarray]:
    """Frame marks over l2_read plus the word-level marks."""
    labels = label_triplet_full(t, metric, policy, rho_word)
    return labels.read, labels.words
