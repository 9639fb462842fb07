"""Monotonic alignment engine.

A soft alignment distributes each target frame's probability mass over source
positions (columns are stochastic). The forward-sum loss scores all monotone
paths through that matrix, Viterbi extracts the best one, and the binarization
loss pulls soft mass onto it. The focus rate flags source frames that no
target frame attends to above a threshold, which is the alignment-breakdown
unintelligibility indicator.

Losses are computed with torch so they can sit inside a training graph; they
accept plain numpy input as well (converted to float64).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import InfeasibleAlignmentError, ValidationError

PROB_FLOOR = 1e-12
DEFAULT_TAU = math.log(0.5)
DEFAULT_TEMPERATURE = 1.0

# Finite stand-in for log(0): large enough to never win a max or contribute
# to a log-sum-exp, small enough to keep gradients NaN-free.
_NEG = -1.0e9


def _as_tensor(x, dtype=torch.float64) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x), dtype=dtype)


@dataclass
class SoftAlignment:
    """Column-stochastic source-target attention matrix, shape (T_src, T_trg)."""

    probs: torch.Tensor

    def __post_init__(self):
        probs = _as_tensor(self.probs)
        if probs.ndim != 2 or probs.shape[0] < 1 or probs.shape[1] < 1:
            raise ValidationError(f"probs must be a (T_src, T_trg) matrix, got shape {tuple(probs.shape)}")
        with torch.no_grad():
            if not torch.all(torch.isfinite(probs)):
                raise ValidationError("probs contain non-finite values")
            if torch.any(probs <= 0) or torch.any(probs > 1):
                raise ValidationError("probs must lie in (0, 1]")
            col_sums = probs.sum(dim=0)
            if torch.any((col_sums - 1.0).abs() > 1e-6):
                raise ValidationError("columns must sum to 1 within 1e-6")
        self.probs = probs

    @property
    def num_src(self) -> int:
        return self.probs.shape[0]

    @property
    def num_trg(self) -> int:
        return self.probs.shape[1]

    def log_probs(self) -> torch.Tensor:
        return torch.log(self.probs.clamp_min(PROB_FLOOR))


@dataclass(frozen=True)
class HardAlignment:
    """Monotone assignment of target frames to source positions (0-based).

    assign[j] is the source index of target frame j; durations[i] counts the
    target frames assigned to source i (always >= 1).
    """

    assign: np.ndarray
    durations: np.ndarray

    def __post_init__(self):
        assign = np.asarray(self.assign, dtype=np.int64)
        durations = np.asarray(self.durations, dtype=np.int64)
        n_src = durations.shape[0]
        if assign.ndim != 1 or durations.ndim != 1 or assign.shape[0] < 1:
            raise ValidationError("assign and durations must be non-empty vectors")
        if assign[0] != 0 or assign[-1] != n_src - 1:
            raise ValidationError("assign must start at source 0 and end at the last source index")
        incr = np.diff(assign)
        if np.any((incr != 0) & (incr != 1)):
            raise ValidationError("assign must be non-decreasing with increments in {0, 1}")
        if np.any(durations < 1):
            raise ValidationError("every source position needs at least one target frame")
        counts = np.bincount(assign, minlength=n_src)
        if not np.array_equal(counts, durations):
            raise ValidationError("durations must equal assignment counts")
        assign.setflags(write=False)
        durations.setflags(write=False)
        object.__setattr__(self, "assign", assign)
        object.__setattr__(self, "durations", durations)

    @property
    def num_src(self) -> int:
        return self.durations.shape[0]

    @property
    def num_trg(self) -> int:
        return self.assign.shape[0]


def soft_alignment(h_src, h_trg, temperature: float = DEFAULT_TEMPERATURE) -> SoftAlignment:
    """Column softmax of negative squared distance between feature rows."""
    hs = _as_tensor(h_src)
    ht = _as_tensor(h_trg)
    if hs.ndim != 2 or ht.ndim != 2 or hs.shape[1] != ht.shape[1]:
        raise ValidationError(f"incompatible feature shapes {tuple(hs.shape)} and {tuple(ht.shape)}")
    if not bool(torch.all(torch.isfinite(hs)).item()) or not bool(torch.all(torch.isfinite(ht)).item()):
        raise ValidationError("alignment features contain non-finite values")
    if temperature <= 0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    log_probs = log_soft_alignment(hs, ht, temperature)
    probs = torch.exp(log_probs).clamp_min(PROB_FLOOR)
    # Renormalize: float32 softmax rounding can leave column sums a few ulps
    # off 1, which would trip the column-stochastic check downstream.
    probs = probs / probs.sum(dim=0, keepdim=True)
    return SoftAlignment(probs=probs.clamp(min=PROB_FLOOR, max=1.0))


def log_soft_alignment(hs: torch.Tensor, ht: torch.Tensor, temperature: float) -> torch.Tensor:
    """Log-domain soft alignment; stable building block for training graphs."""
    sq = (hs * hs).sum(dim=1)[:, None] + (ht * ht).sum(dim=1)[None, :] - 2.0 * (hs @ ht.T)
    logits = -sq.clamp_min(0.0) / temperature
    return torch.log_softmax(logits, dim=0)


def forward_sum_loss(soft: SoftAlignment) -> torch.Tensor:
    """Negative log of the total probability over all monotone paths.

    Dynamic programming over log space; differentiable with respect to probs.
    """
    return forward_sum_from_log(soft.log_probs())


def forward_sum_from_log(lp: torch.Tensor) -> torch.Tensor:
    n_src, n_trg = lp.shape
    if n_trg < n_src:
        raise InfeasibleAlignmentError(
            f"no monotone path exists for T_src={n_src} > T_trg={n_trg}"
        )
    neg = torch.full((1,), _NEG, dtype=lp.dtype)
    init = torch.full((n_src,), _NEG, dtype=lp.dtype)
    init[0] = 0.0
    alpha = lp[:, 0] + init
    for j in range(1, n_trg):
        stay = alpha
        move = torch.cat([neg, alpha[:-1]])
        alpha = lp[:, j] + torch.logaddexp(stay, move)
    return -alpha[n_src - 1]


def viterbi_hard(soft: SoftAlignment) -> HardAlignment:
    """Most probable monotone path; ties prefer staying on the current source."""
    lp = soft.log_probs().detach().cpu().numpy()
    n_src, n_trg = lp.shape
    if n_trg < n_src:
        raise InfeasibleAlignmentError(
            f"no monotone path exists for T_src={n_src} > T_trg={n_trg}"
        )
    alpha = np.full((n_src, n_trg), _NEG)
    alpha[0, 0] = lp[0, 0]
    for j in range(1, n_trg):
        stay = alpha[:, j - 1]
        move = np.concatenate(([_NEG], alpha[:-1, j - 1]))
        alpha[:, j] = lp[:, j] + np.maximum(stay, move)
    assign = np.empty(n_trg, dtype=np.int64)
    i = n_src - 1
    assign[n_trg - 1] = i
    for j in range(n_trg - 1, 0, -1):
        stay = alpha[i, j - 1]
        move = alpha[i - 1, j - 1] if i > 0 else -np.inf
        if stay < move:
            i -= 1
        assign[j - 1] = i
    return HardAlignment(assign=assign, durations=np.bincount(assign, minlength=n_src))


def binarization_loss(hard: HardAlignment, soft: SoftAlignment) -> torch.Tensor:
    """Negative log soft-probability accumulated along the hard path.

    Zero exactly when the soft matrix already puts probability one on every
    step of the hard path.
    """
    if hard.num_src != soft.num_src or hard.num_trg != soft.num_trg:
        raise ValidationError(
            f"shape mismatch: hard is {hard.num_src}x{hard.num_trg}, "
            f"soft is {soft.num_src}x{soft.num_trg}"
        )
    lp = soft.log_probs()
    idx = torch.from_numpy(np.array(hard.assign, dtype=np.int64))
    return -lp.gather(0, idx[None, :]).sum()


def alignment_loss(soft: SoftAlignment, hard: HardAlignment) -> torch.Tensor:
    return forward_sum_loss(soft) + binarization_loss(hard, soft)


def focus_rate(soft: SoftAlignment, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Per-source-frame breakdown flags: 1 when no target frame attends to the
    frame with log-probability at least tau."""
    with torch.no_grad():
        row_max = soft.log_probs().max(dim=1).values.cpu().numpy()
    return (row_max < tau).astype(np.int8)
