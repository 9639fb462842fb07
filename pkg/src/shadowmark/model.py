"""Multi-task sequence conversion model with disfluency heads.

Encoder -> length regulator -> decoder -> postnet reconstructs the rater's
shadow features from the learner's read-aloud features. Two convolutional
disfluency label predictors (one on the encoder output, one on the decoder
output) are fused on the source time axis through inverse length regulation,
yielding per-frame unintelligibility logits for the learner's speech.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ValidationError


@dataclass(frozen=True)
class ModelConfig:
    d_src: int = 16
    d_trg: int = 16
    h: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    dlp_channels: int = 32
    lam: float = 10.0
    focal_gamma: float = 2.0
    focal_alpha: float | None = None  # None: estimated from the training labels
    temperature: float = 1.0
    learn_rate: float = 1e-3
    max_steps: int = 500
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        for name in ("d_src", "d_trg", "h", "enc_layers", "dec_layers", "dlp_channels", "batch_size"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        if self.lam < 0:
            raise ValidationError("lam must be non-negative")
        if self.focal_gamma < 0:
            raise ValidationError("focal_gamma must be non-negative")
        if self.focal_alpha is not None and not (0.0 < self.focal_alpha < 1.0):
            raise ValidationError("focal_alpha must lie in (0, 1)")
        if self.temperature <= 0:
            raise ValidationError("temperature must be positive")
        if self.learn_rate <= 0:
            raise ValidationError("learn_rate must be positive")
        if self.max_steps < 0:
            raise ValidationError("max_steps must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def with_alpha(self, alpha: float) -> "ModelConfig":
        return replace(self, focal_alpha=alpha)


def length_regulate(h: torch.Tensor, durations) -> torch.Tensor:
    """Repeat source row i durations[i] times, preserving order."""
    dur = torch.from_numpy(np.array(durations, dtype=np.int64))
    if dur.ndim != 1 or dur.shape[0] != h.shape[0]:
        raise ValidationError(f"durations must be one per source frame, got {tuple(dur.shape)} for {h.shape[0]} frames")
    if bool((dur < 0).any()):
        raise ValidationError("durations must be non-negative")
    return torch.repeat_interleave(h, dur, dim=0)


def inverse_length_regulate(z: torch.Tensor, durations) -> torch.Tensor:
    """Pool target rows back onto source positions by segment mean.

    Written as seg[0] + mean(seg - seg[0]) so that pooling the output of
    length_regulate returns the original rows exactly.
    """
    dur = torch.from_numpy(np.array(durations, dtype=np.int64))
    if dur.ndim != 1:
        raise ValidationError("durations must be a vector")
    if bool((dur < 1).any()):
        raise ValidationError("inverse length regulation needs every duration >= 1")
    if int(dur.sum()) != z.shape[0]:
        raise ValidationError(f"durations sum to {int(dur.sum())} but input has {z.shape[0]} frames")
    out = []
    for seg in torch.split(z, dur.tolist(), dim=0):
        out.append(seg[0] + (seg - seg[0]).mean(dim=0))
    return torch.stack(out, dim=0)


def focal_loss(logits: torch.Tensor, labels, gamma: float, alpha: float) -> torch.Tensor:
    """Mean of -alpha_t (1 - p_t)^gamma log p_t over frames."""
    if isinstance(labels, torch.Tensor):
        y = labels.to(logits.dtype)
    else:
        y = torch.from_numpy(np.array(labels)).to(logits.dtype)
    if logits.shape != y.shape:
        raise ValidationError(f"logits shape {tuple(logits.shape)} != labels shape {tuple(y.shape)}")
    if bool(((y != 0) & (y != 1)).any()):
        raise ValidationError("labels must be binary")
    log_pt = F.logsigmoid(logits) * y + F.logsigmoid(-logits) * (1.0 - y)
    alpha_t = alpha * y + (1.0 - alpha) * (1.0 - y)
    if gamma == 0.0:
        weighted = -alpha_t * log_pt
    else:
        pt = torch.exp(log_pt)
        weighted = -alpha_t * (1.0 - pt).pow(gamma) * log_pt
    return weighted.mean()


def duration_loss(predicted_log_durations: torch.Tensor, target_durations) -> torch.Tensor:
    """MSE between predicted log-durations and the log of the hard-alignment durations."""
    if isinstance(target_durations, torch.Tensor):
        target = target_durations.to(predicted_log_durations.dtype)
    else:
        target = torch.from_numpy(np.array(target_durations)).to(predicted_log_durations.dtype)
    if predicted_log_durations.shape != target.shape:
        raise ValidationError("duration prediction and target lengths differ")
    if bool((target <= 0).any()):
        raise ValidationError("target durations must be positive")
    return ((predicted_log_durations - torch.log(target)) ** 2).mean()


class ConvAttnBlock(nn.Module):
    """Residual depth block: time convolution followed by self-attention."""

    def __init__(self, h: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(h)
        self.conv = nn.Conv1d(h, h, kernel_size=3, padding=1)
        self.norm2 = nn.LayerNorm(h)
        self.attn = nn.MultiheadAttention(h, num_heads=1, batch_first=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:  # (T, h)
        y = self.norm1(x)
        y = self.conv(y.T.unsqueeze(0)).squeeze(0).T
        x = x + F.gelu(y)
        y = self.norm2(x).unsqueeze(0)
        a, _ = self.attn(y, y, y, need_weights=False)
        return x + a.squeeze(0)


class DisfluencyPredictor(nn.Module):
    """5-layer 1-D CNN head: kernel-5 same-padded stacks, final width-1 projection."""

    def __init__(self, c_in: int, channels: int):
        super().__init__()
        convs = []
        for i in range(4):
            convs.append(nn.Conv1d(c_in if i == 0 else channels, channels, kernel_size=5, padding=2))
        self.convs = nn.ModuleList(convs)
        self.project = nn.Conv1d(channels, 1, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:  # (T, c_in) -> (T,)
        y = x.T.unsqueeze(0)
        for conv in self.convs:
            y = F.relu(conv(y))
        return self.project(y).squeeze(0).squeeze(0)


class DurationPredictor(nn.Module):
    """Per-frame log-duration regressor on the encoder output."""

    def __init__(self, h: int, channels: int):
        super().__init__()
        self.conv = nn.Conv1d(h, channels, kernel_size=3, padding=1)
        self.project = nn.Conv1d(channels, 1, kernel_size=1)

    def forward(self, h: torch.Tensor) -> torch.Tensor:  # (T, h) -> (T,)
        y = F.relu(self.conv(h.T.unsqueeze(0)))
        return self.project(y).squeeze(0).squeeze(0)


class MultiTaskVC(nn.Module):
    """The full conversion model with its disfluency heads."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.in_proj = nn.Linear(cfg.d_src, cfg.h)
        self.encoder = nn.ModuleList(ConvAttnBlock(cfg.h) for _ in range(cfg.enc_layers))
        self.trg_proj = nn.Linear(cfg.d_trg, cfg.h)
        self.decoder = nn.ModuleList(ConvAttnBlock(cfg.h) for _ in range(cfg.dec_layers))
        self.post_conv = nn.Conv1d(cfg.h, cfg.h, kernel_size=5, padding=2)
        self.post_proj = nn.Linear(cfg.h, cfg.d_trg)
        self.dlp_enc = DisfluencyPredictor(cfg.h, cfg.dlp_channels)
        self.dlp_dec = DisfluencyPredictor(cfg.h, cfg.dlp_channels)
        self.dur_pred = DurationPredictor(cfg.h, cfg.dlp_channels)
        # Zero init: an untrained model fuses to logit 0, i.e. probability 0.5.
        self.fuse = nn.Linear(2, 1)
        nn.init.zeros_(self.fuse.weight)
        nn.init.zeros_(self.fuse.bias)

    def encode(self, f_src: torch.Tensor) -> torch.Tensor:
        if f_src.ndim != 2 or f_src.shape[1] != self.cfg.d_src:
            raise ValidationError(f"expected (T, {self.cfg.d_src}) source features, got {tuple(f_src.shape)}")
        h = self.in_proj(f_src)
        for block in self.encoder:
            h = block(h)
        return h

    def project_target(self, f_trg: torch.Tensor) -> torch.Tensor:
        if f_trg.ndim != 2 or f_trg.shape[1] != self.cfg.d_trg:
            raise ValidationError(f"expected (T, {self.cfg.d_trg}) target features, got {tuple(f_trg.shape)}")
        return self.trg_proj(f_trg)

    def decode(self, h_reg: torch.Tensor) -> torch.Tensor:
        if h_reg.ndim != 2 or h_reg.shape[1] != self.cfg.h:
            raise ValidationError(f"expected (T, {self.cfg.h}) regulated features, got {tuple(h_reg.shape)}")
        z = h_reg
        for block in self.decoder:
            z = block(z)
        return z

    def postnet(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 2 or z.shape[1] != self.cfg.h:
            raise ValidationError(f"expected (T, {self.cfg.h}) decoder features, got {tuple(z.shape)}")
        y = F.gelu(self.post_conv(z.T.unsqueeze(0)).squeeze(0).T)
        return self.post_proj(y)

    def fuse_dlabel(self, logits_enc: torch.Tensor, logits_dec_mapped: torch.Tensor) -> torch.Tensor:
        if logits_enc.shape != logits_dec_mapped.shape:
            raise ValidationError("fused channels must have equal length")
        stacked = torch.stack([logits_enc, logits_dec_mapped], dim=1)
        return self.fuse(stacked).squeeze(1)

    def source_dlabel_logits(self, f_src: torch.Tensor, durations=None) -> torch.Tensor:
        """Source-side disfluency logits, Fig.-2 style: encoder DLP fused with
        the inverse-regulated decoder DLP. Durations come from the duration
        predictor when not supplied."""
        h = self.encode(f_src)
        if durations is None:
            durations = self.predict_durations(h)
        z = self.decode(length_regulate(h, durations))
        mapped = inverse_length_regulate(self.dlp_dec(z), durations)
        return self.fuse_dlabel(self.dlp_enc(h), mapped)

    def predict_durations(self, h: torch.Tensor) -> np.ndarray:
        with torch.no_grad():
            logd = self.dur_pred(h)
        return np.maximum(np.round(np.exp(logd.numpy())).astype(np.int64), 1)
