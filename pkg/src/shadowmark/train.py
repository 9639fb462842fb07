"""Training loop, loss bookkeeping, prediction, and checkpoint I/O.

One training step runs the full conversion graph per utterance: encode the
learner's read features, align them to the rater's shadow features, regulate
lengths with the hard alignment, decode, reconstruct, and supervise both
disfluency heads. Scalar loss terms are averaged over the batch and combined
as

    l_align = l_forward_sum + l_bin
    l_vc    = l_f + l_lr + l_align
    l_all   = lam * (l_d_enc + l_d_dec) + l_vc

with the composites derived from the logged Python floats, so the identities
above hold bit-exactly on every logged step.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .align import (
    DEFAULT_TAU,
    binarization_loss,
    focus_rate,
    forward_sum_loss,
    soft_alignment,
    viterbi_hard,
)
from .data import DLabel, FrameSequence, UtteranceTriplet
from .dtw import DEFAULT_RHO_WORD, dlabel_frames_to_words
from .errors import FormatError, InfeasibleAlignmentError, ValidationError
from .model import (
    ModelConfig,
    MultiTaskVC,
    duration_loss,
    focal_loss,
    inverse_length_regulate,
    length_regulate,
)

_CKPT_MAGIC = b"VCCK"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class TrainExample:
    """One utterance prepared for the training graph."""

    utt_id: str
    f_src: torch.Tensor  # (T_src, d_src) read features
    f_trg: torch.Tensor  # (T_trg, d_trg) shadow features
    src_label: np.ndarray  # (T_src,) binary
    trg_label: np.ndarray  # (T_trg,) binary

    def __post_init__(self):
        if self.f_src.ndim != 2 or self.f_trg.ndim != 2:
            raise ValidationError("features must be (T, d) matrices")
        if self.src_label.shape != (self.f_src.shape[0],):
            raise ValidationError(f"utterance {self.utt_id}: source label length mismatch")
        if self.trg_label.shape != (self.f_trg.shape[0],):
            raise ValidationError(f"utterance {self.utt_id}: target label length mismatch")


def make_example(triplet: UtteranceTriplet, src_marks: np.ndarray, trg_marks: np.ndarray) -> TrainExample:
    return TrainExample(
        utt_id=triplet.id,
        f_src=torch.from_numpy(np.array(triplet.l2_read.frames, dtype=np.float32)),
        f_trg=torch.from_numpy(np.array(triplet.l1_shadow.frames, dtype=np.float32)),
        src_label=np.array(src_marks, dtype=np.int8),
        trg_label=np.array(trg_marks, dtype=np.int8),
    )


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar loss terms for one step; composites derived in __post_init__."""

    l_f: float
    l_lr: float
    l_forward_sum: float
    l_bin: float
    l_d_enc: float
    l_d_dec: float
    lam: float
    l_vc: float = field(init=False)
    l_all: float = field(init=False)

    def __post_init__(self):
        for name in ("l_f", "l_lr", "l_forward_sum", "l_bin", "l_d_enc", "l_d_dec"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValidationError(f"{name} must be finite and non-negative, got {value}")
        object.__setattr__(self, "l_vc", self.l_f + self.l_lr + self.l_forward_sum + self.l_bin)
        object.__setattr__(self, "l_all", self.lam * (self.l_d_enc + self.l_d_dec) + self.l_vc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    cfg: ModelConfig  # with focal_alpha resolved to a concrete value
    model: MultiTaskVC
    opt: torch.optim.SGD
    step: int
    batch_rng: np.random.Generator


def resolve_alpha(cfg: ModelConfig, examples: list[TrainExample]) -> ModelConfig:
    """Fill in focal_alpha as the complement of the pooled positive rate."""
    if cfg.focal_alpha is not None:
        return cfg
    total = sum(ex.src_label.size + ex.trg_label.size for ex in examples)
    positive = sum(int(ex.src_label.sum()) + int(ex.trg_label.sum()) for ex in examples)
    rate = positive / total if total else 0.0
    return cfg.with_alpha(float(np.clip(1.0 - rate, 0.05, 0.95)))


def init_state(cfg: ModelConfig) -> TrainState:
    if cfg.focal_alpha is None:
        raise ValidationError("focal_alpha must be resolved before building a trainer")
    torch.set_num_threads(1)
    torch.manual_seed(cfg.seed)
    model = MultiTaskVC(cfg)
    opt = torch.optim.SGD(model.parameters(), lr=cfg.learn_rate)
    return TrainState(
        cfg=cfg,
        model=model,
        opt=opt,
        step=0,
        batch_rng=np.random.default_rng(cfg.seed),
    )


def _example_losses(model: MultiTaskVC, cfg: ModelConfig, ex: TrainExample) -> dict[str, torch.Tensor]:
    t_trg = ex.f_trg.shape[0]
    h = model.encode(ex.f_src)
    h_trg = model.project_target(ex.f_trg)
    try:
        soft = soft_alignment(h, h_trg, cfg.temperature)
        hard = viterbi_hard(soft)
    except InfeasibleAlignmentError as exc:
        raise InfeasibleAlignmentError(f"utterance {ex.utt_id}: {exc}") from None

    l_fs = forward_sum_loss(soft) / t_trg
    l_bin = binarization_loss(hard, soft) / t_trg

    durations = hard.durations
    h_reg = length_regulate(h, durations)
    z = model.decode(h_reg)
    f_pred = model.postnet(z)
    l_f = (f_pred - ex.f_trg).abs().mean()

    log_dur = model.dur_pred(h)
    l_lr = duration_loss(log_dur, durations.astype(np.float64))

    logits_dec = model.dlp_dec(z)
    mapped = inverse_length_regulate(logits_dec, durations)
    fused = model.fuse_dlabel(model.dlp_enc(h), mapped)
    l_d_enc = focal_loss(fused, ex.src_label, cfg.focal_gamma, cfg.focal_alpha)
    l_d_dec = focal_loss(logits_dec, ex.trg_label, cfg.focal_gamma, cfg.focal_alpha)

    return {
        "l_f": l_f,
        "l_lr": l_lr,
        "l_forward_sum": l_fs,
        "l_bin": l_bin,
        "l_d_enc": l_d_enc,
        "l_d_dec": l_d_dec,
    }


def training_step(state: TrainState, batch: list[TrainExample]) -> LossBreakdown:
    """Run one SGD update over a batch of prepared utterances."""
    if not batch:
        raise ValidationError("training batch is empty")
    cfg = state.cfg
    state.model.train()
    sums: dict[str, torch.Tensor] = {}
    for ex in batch:
        for name, value in _example_losses(state.model, cfg, ex).items():
            sums[name] = sums.get(name, 0.0) + value
    means = {name: value / len(batch) for name, value in sums.items()}
    total = (
        cfg.lam * (means["l_d_enc"] + means["l_d_dec"])
        + means["l_f"]
        + means["l_lr"]
        + means["l_forward_sum"]
        + means["l_bin"]
    )
    state.opt.zero_grad()
    total.backward()
    state.opt.step()
    state.step += 1
    return LossBreakdown(lam=cfg.lam, **{name: float(value.detach()) for name, value in means.items()})


def sample_batch(state: TrainState, examples: list[TrainExample]) -> list[TrainExample]:
    idx = state.batch_rng.integers(0, len(examples), size=state.cfg.batch_size)
    return [examples[i] for i in idx]


def train_loop(
    state: TrainState,
    examples: list[TrainExample],
    num_steps: int,
    log_file=None,
) -> list[LossBreakdown]:
    """Run num_steps sampled-batch updates, appending one JSON line per step."""
    if not examples:
        raise ValidationError("no training examples")
    history = []
    for _ in range(num_steps):
        batch = sample_batch(state, examples)
        breakdown = training_step(state, batch)
        history.append(breakdown)
        if log_file is not None:
            record = {"step": state.step, "wall_time": time.time()}
            record.update(breakdown.to_dict())
            log_file.write(json.dumps(record, sort_keys=True) + "\n")
            log_file.flush()
    return history


def predict_unintelligibility(
    state: TrainState,
    f_src: FrameSequence,
    mode: str = "multitask",
    reference: FrameSequence | None = None,
    tau: float = DEFAULT_TAU,
) -> DLabel:
    """Per-frame unintelligibility marks for one read-aloud utterance.

    multitask: sigmoid of the fused disfluency logits, mark iff prob > 0.5.
    alignment: focus rate of the soft alignment against a reference shadow;
    requires the reference features.
    """
    if mode not in ("multitask", "alignment"):
        raise ValidationError(f"unknown prediction mode: {mode}")
    model = state.model
    model.eval()
    frames = torch.from_numpy(np.array(f_src.frames, dtype=np.float32))
    if mode == "multitask":
        with torch.no_grad():
            logits = model.source_dlabel_logits(frames)
            probs = torch.sigmoid(logits).numpy()
        marks = (probs > 0.5).astype(np.int8)
        return DLabel(marks=marks, hop_ms=f_src.hop_ms)
    if reference is None:
        raise ValidationError("alignment mode needs reference shadow features")
    ref = torch.from_numpy(np.array(reference.frames, dtype=np.float32))
    with torch.no_grad():
        soft = soft_alignment(model.encode(frames), model.project_target(ref), state.cfg.temperature)
    return DLabel(marks=focus_rate(soft, tau), hop_ms=f_src.hop_ms)


def predict_words(
    state: TrainState,
    triplet: UtteranceTriplet,
    mode: str = "multitask",
    tau: float = DEFAULT_TAU,
    rho_word: float = DEFAULT_RHO_WORD,
) -> tuple[DLabel, np.ndarray]:
    """Frame marks plus their word-level projection for one triplet."""
    reference = triplet.l1_shadow if mode == "alignment" else None
    label = predict_unintelligibility(state, triplet.l2_read, mode=mode, reference=reference, tau=tau)
    words = dlabel_frames_to_words(label, triplet.word_timings, rho_word)
    return label, words


def _rng_state_to_json(state: TrainState) -> dict:
    return {
        "step": state.step,
        "batch_rng": state.batch_rng.bit_generator.state,
        "torch_rng": bytes(torch.get_rng_state().numpy().tobytes()).hex(),
    }


def save_checkpoint(path, state: TrainState) -> None:
    """Binary snapshot: config echo, step and RNG state, float32 parameters."""
    cfg_blob = json.dumps(state.cfg.to_dict(), sort_keys=True).encode("utf-8")
    meta_blob = json.dumps(_rng_state_to_json(state), sort_keys=True).encode("utf-8")
    sd = state.model.state_dict()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", _CKPT_VERSION))
        f.write(struct.pack("<I", len(cfg_blob)))
        f.write(cfg_blob)
        f.write(struct.pack("<I", len(meta_blob)))
        f.write(meta_blob)
        f.write(struct.pack("<I", len(sd)))
        for name in sorted(sd):
            tensor = sd[name]
            if tensor.dtype != torch.float32:
                raise ValidationError(f"parameter {name} is {tensor.dtype}, expected float32")
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            shape = tuple(tensor.shape)
            f.write(struct.pack("<B", len(shape)))
            for dim in shape:
                f.write(struct.pack("<I", dim))
            f.write(tensor.detach().numpy().astype("<f4", copy=False).tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    blob = f.read(n)
    if len(blob) != n:
        raise FormatError(f"checkpoint truncated while reading {what}")
    return blob


def load_checkpoint(path) -> TrainState:
    """Rebuild a trainer that continues bit-exactly from the saved step."""
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != _CKPT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != _CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        (n,) = struct.unpack("<I", _read_exact(f, 4, "config length"))
        cfg = ModelConfig.from_dict(json.loads(_read_exact(f, n, "config")))
        (n,) = struct.unpack("<I", _read_exact(f, 4, "meta length"))
        meta = json.loads(_read_exact(f, n, "meta"))
        (count,) = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
        tensors: dict[str, torch.Tensor] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, nlen, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1, "rank"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, "shape")) if ndim else ()
            size = int(np.prod(shape, dtype=np.int64)) if shape else 1
            data = np.frombuffer(_read_exact(f, 4 * size, f"tensor {name}"), dtype="<f4")
            tensors[name] = torch.from_numpy(data.reshape(shape).copy())
        trailing = f.read(1)
    if trailing:
        raise FormatError(f"{path}: trailing bytes after last tensor")

    state = init_state(cfg)
    state.model.load_state_dict(tensors, strict=True)
    state.step = int(meta["step"])
    gen = np.random.default_rng(0)
    gen.bit_generator.state = meta["batch_rng"]
    state.batch_rng = gen
    torch.set_rng_state(torch.from_numpy(np.frombuffer(bytes.fromhex(meta["torch_rng"]), dtype=np.uint8).copy()))
    return state
