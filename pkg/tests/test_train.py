"""Training loop, loss bookkeeping, checkpointing, and prediction modes."""

import io
import json

import numpy as np
import pytest
import torch

from shadowmark.data import DLabel, FrameSequence, WordTiming, UtteranceTriplet
from shadowmark.dtw import label_triplet_full
from shadowmark.errors import FormatError, InfeasibleAlignmentError, ValidationError
from shadowmark.metrics import frame_accuracy
from shadowmark.model import ModelConfig
from shadowmark.synth import GeneratorConfig, generate_synthetic_triplet
from shadowmark.train import (
    LossBreakdown,
    TrainExample,
    init_state,
    load_checkpoint,
    make_example,
    predict_unintelligibility,
    predict_words,
    resolve_alpha,
    sample_batch,
    save_checkpoint,
    train_loop,
    training_step,
)

SMALL_GEN = GeneratorConfig(
    words_min=4, words_max=6, frames_per_word_min=6, frames_per_word_max=10,
    d_src=8, d_trg=8, rho_gen=0.2,
)


def small_config(**kw):
    base = dict(
        d_src=8, d_trg=8, h=16, enc_layers=1, dec_layers=1, dlp_channels=8,
        focal_alpha=0.5, batch_size=4, seed=0,
    )
    base.update(kw)
    return ModelConfig(**base)


def build_examples(n, seed_base=50, gen=SMALL_GEN):
    out = []
    for i in range(n):
        t = generate_synthetic_triplet(seed=seed_base + i, cfg=gen)
        lab = label_triplet_full(t)
        out.append((t, make_example(t, src_marks=lab.read.marks, trg_marks=lab.shadow.marks)))
    return out


class TestTrainExample:
    def test_make_example_shapes(self):
        (t, ex), = build_examples(1)
        assert ex.utt_id == t.id
        assert ex.f_src.shape == (t.l2_read.num_frames, 8)
        assert ex.f_trg.shape == (t.l1_shadow.num_frames, 8)
        assert ex.src_label.shape == (t.l2_read.num_frames,)
        assert ex.trg_label.shape == (t.l1_shadow.num_frames,)

    def test_label_length_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            TrainExample(
                utt_id="u",
                f_src=torch.zeros(4, 8),
                f_trg=torch.zeros(6, 8),
                src_label=np.zeros(5, dtype=np.int8),
                trg_label=np.zeros(6, dtype=np.int8),
            )


class TestResolveAlpha:
    @staticmethod
    def example_with_rates(n_pos_src, n_src, n_pos_trg, n_trg):
        src = np.zeros(n_src, dtype=np.int8)
        src[:n_pos_src] = 1
        trg = np.zeros(n_trg, dtype=np.int8)
        trg[:n_pos_trg] = 1
        return TrainExample(
            utt_id="u", f_src=torch.zeros(n_src, 8), f_trg=torch.zeros(n_trg, 8),
            src_label=src, trg_label=trg,
        )

    def test_explicit_alpha_wins(self):
        cfg = small_config(focal_alpha=0.42)
        assert resolve_alpha(cfg, []).focal_alpha == 0.42

    def test_complement_of_pooled_rate(self):
        cfg = small_config(focal_alpha=None)
        ex = self.example_with_rates(5, 10, 0, 10)  # pooled rate 0.25
        assert resolve_alpha(cfg, [ex]).focal_alpha == pytest.approx(0.75)

    def test_clipped_for_degenerate_corpora(self):
        cfg = small_config(focal_alpha=None)
        all_zero = self.example_with_rates(0, 10, 0, 10)
        assert resolve_alpha(cfg, [all_zero]).focal_alpha == 0.95
        all_one = self.example_with_rates(10, 10, 10, 10)
        assert resolve_alpha(cfg, [all_one]).focal_alpha == 0.05

    def test_init_state_requires_resolved_alpha(self):
        with pytest.raises(ValidationError):
            init_state(small_config(focal_alpha=None))


class TestLossBreakdown:
    def test_composition_identities(self):
        b = LossBreakdown(
            l_f=0.37, l_lr=0.11, l_forward_sum=2.9, l_bin=3.4,
            l_d_enc=0.21, l_d_dec=0.09, lam=10.0,
        )
        assert b.l_vc == 0.37 + 0.11 + 2.9 + 3.4
        assert b.l_all == 10.0 * (0.21 + 0.09) + b.l_vc

    def test_lambda_ten_worked_example(self):
        b = LossBreakdown(
            l_f=0.25, l_lr=0.25, l_forward_sum=0.25, l_bin=0.25,
            l_d_enc=0.2, l_d_dec=0.3, lam=10.0,
        )
        assert b.l_vc == 1.0
        assert b.l_all == 6.0

    def test_lambda_zero_collapses_to_vc(self):
        b = LossBreakdown(
            l_f=0.4, l_lr=0.1, l_forward_sum=1.7, l_bin=2.2,
            l_d_enc=0.5, l_d_dec=0.6, lam=0.0,
        )
        assert b.l_all == b.l_vc

    def test_to_dict_round_trips_fields(self):
        b = LossBreakdown(
            l_f=1.0, l_lr=2.0, l_forward_sum=3.0, l_bin=4.0,
            l_d_enc=5.0, l_d_dec=6.0, lam=10.0,
        )
        d = b.to_dict()
        for key in ("l_f", "l_lr", "l_forward_sum", "l_bin", "l_d_enc", "l_d_dec", "l_vc", "l_all", "lam"):
            assert key in d

    def test_rejects_negative_terms(self):
        with pytest.raises(ValidationError):
            LossBreakdown(
                l_f=-0.1, l_lr=0.0, l_forward_sum=0.0, l_bin=0.0,
                l_d_enc=0.0, l_d_dec=0.0, lam=10.0,
            )


class TestTrainingStep:
    def test_identities_hold_on_real_steps(self):
        examples = [ex for _, ex in build_examples(4)]
        state = init_state(small_config())
        for _ in range(5):
            b = training_step(state, examples)
            assert b.l_vc == b.l_f + b.l_lr + b.l_forward_sum + b.l_bin
            assert b.l_all == b.lam * (b.l_d_enc + b.l_d_dec) + b.l_vc
            for term in (b.l_f, b.l_lr, b.l_forward_sum, b.l_bin, b.l_d_enc, b.l_d_dec):
                assert term >= 0.0

    def test_lambda_zero_equality_on_real_step(self):
        examples = [ex for _, ex in build_examples(2)]
        state = init_state(small_config(lam=0.0))
        b = training_step(state, examples)
        assert b.l_all == b.l_vc

    def test_step_counter_advances(self):
        examples = [ex for _, ex in build_examples(2)]
        state = init_state(small_config())
        assert state.step == 0
        training_step(state, examples)
        assert state.step == 1

    def test_empty_batch_rejected(self):
        state = init_state(small_config())
        with pytest.raises(ValidationError):
            training_step(state, [])

    def test_infeasible_example_names_utterance(self):
        # shadow shorter than the read side leaves no monotone path
        ex = TrainExample(
            utt_id="utt-broken",
            f_src=torch.randn(10, 8),
            f_trg=torch.randn(6, 8),
            src_label=np.zeros(10, dtype=np.int8),
            trg_label=np.zeros(6, dtype=np.int8),
        )
        state = init_state(small_config())
        with pytest.raises(InfeasibleAlignmentError, match="utt-broken"):
            training_step(state, [ex])

    def test_overfits_fixed_batch_in_fifty_steps(self):
        examples = [ex for _, ex in build_examples(4)]
        state = init_state(small_config(learn_rate=3e-3))
        first = training_step(state, examples).l_all
        last = first
        for _ in range(49):
            last = training_step(state, examples).l_all
        assert last < 0.5 * first


class TestTrainLoop:
    def test_history_and_log_agree(self):
        examples = [ex for _, ex in build_examples(3)]
        state = init_state(small_config())
        log = io.StringIO()
        history = train_loop(state, examples, num_steps=8, log_file=log)
        assert len(history) == 8
        assert state.step == 8
        lines = [json.loads(line) for line in log.getvalue().splitlines()]
        assert [rec["step"] for rec in lines] == list(range(1, 9))
        for rec, breakdown in zip(lines, history):
            assert "wall_time" in rec
            assert rec["l_all"] == breakdown.l_all
            # identities must hold on the logged floats, not just in memory
            assert rec["l_vc"] == rec["l_f"] + rec["l_lr"] + rec["l_forward_sum"] + rec["l_bin"]
            assert rec["l_all"] == rec["lam"] * (rec["l_d_enc"] + rec["l_d_dec"]) + rec["l_vc"]

    def test_sampling_is_deterministic_in_seed(self):
        examples = [ex for _, ex in build_examples(6)]
        picks = []
        for _ in range(2):
            state = init_state(small_config(seed=3))
            batch = sample_batch(state, examples)
            picks.append([ex.utt_id for ex in batch])
        assert picks[0] == picks[1]

    def test_empty_example_list_rejected(self):
        state = init_state(small_config())
        with pytest.raises(ValidationError):
            train_loop(state, [], num_steps=1)


class TestCheckpoint:
    def test_next_step_reproduced_bit_exactly(self, tmp_path):
        examples = [ex for _, ex in build_examples(4)]
        state = init_state(small_config())
        train_loop(state, examples, num_steps=3)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, state)

        after_original = train_loop(state, examples, num_steps=1)[0]
        restored = load_checkpoint(path)
        after_restore = train_loop(restored, examples, num_steps=1)[0]
        assert after_original == after_restore

    def test_config_and_counters_round_trip(self, tmp_path):
        state = init_state(small_config(seed=11))
        examples = [ex for _, ex in build_examples(2)]
        train_loop(state, examples, num_steps=2)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, state)
        restored = load_checkpoint(path)
        assert restored.cfg == state.cfg
        assert restored.step == 2
        for name, tensor in state.model.state_dict().items():
            assert torch.equal(restored.model.state_dict()[name], tensor)

    def test_save_is_deterministic(self, tmp_path):
        state = init_state(small_config())
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(a, state)
        save_checkpoint(b, state)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        state = init_state(small_config())
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, state)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        state = init_state(small_config())
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, state)
        path.write_bytes(path.read_bytes() + b"\x00\x01")
        with pytest.raises(FormatError):
            load_checkpoint(path)


class TestPredict:
    def test_untrained_model_marks_nothing(self):
        state = init_state(small_config())
        t = generate_synthetic_triplet(seed=77, cfg=SMALL_GEN)
        label = predict_unintelligibility(state, t.l2_read)
        assert label.marks.sum() == 0
        assert len(label) == t.l2_read.num_frames

    def test_inference_is_deterministic(self):
        examples = [ex for _, ex in build_examples(3)]
        state = init_state(small_config())
        train_loop(state, examples, num_steps=3)
        t = generate_synthetic_triplet(seed=78, cfg=SMALL_GEN)
        a = predict_unintelligibility(state, t.l2_read)
        b = predict_unintelligibility(state, t.l2_read)
        assert np.array_equal(a.marks, b.marks)

    def test_alignment_mode_needs_reference(self):
        state = init_state(small_config())
        t = generate_synthetic_triplet(seed=79, cfg=SMALL_GEN)
        with pytest.raises(ValidationError):
            predict_unintelligibility(state, t.l2_read, mode="alignment")

    def test_alignment_mode_with_minus_inf_tau_marks_nothing(self):
        state = init_state(small_config())
        t = generate_synthetic_triplet(seed=80, cfg=SMALL_GEN)
        label = predict_unintelligibility(
            state, t.l2_read, mode="alignment", reference=t.l1_shadow, tau=-np.inf
        )
        assert label.marks.sum() == 0

    def test_unknown_mode_rejected(self):
        state = init_state(small_config())
        t = generate_synthetic_triplet(seed=81, cfg=SMALL_GEN)
        with pytest.raises(ValidationError):
            predict_unintelligibility(state, t.l2_read, mode="oracle")

    def test_predict_words_projects_frames(self):
        state = init_state(small_config())
        t = generate_synthetic_triplet(seed=82, cfg=SMALL_GEN)
        label, words = predict_words(state, t)
        assert len(label) == t.l2_read.num_frames
        assert words.shape == (len(t.transcript),)


class TestMultitaskSignal:
    def test_large_lambda_beats_lambda_zero_on_heldout(self):
        # High-disfluency corpus so the no-signal baseline sits near chance:
        # with lam=0 the zero-initialized fuse head never receives gradient and
        # predicts nothing, while a large lam trains it. Mean over 3 seeds.
        gen = GeneratorConfig(
            words_min=4, words_max=6, frames_per_word_min=6, frames_per_word_max=10,
            d_src=8, d_trg=8, rho_gen=0.5,
        )

        def heldout_accuracy(lam, seed):
            train_ex, held = [], []
            for i in range(22):
                t = generate_synthetic_triplet(seed=9000 + 100 * seed + i, cfg=gen)
                lab = label_triplet_full(t)
                ex = make_example(t, src_marks=t.gold_dlabel.marks, trg_marks=lab.shadow.marks)
                (train_ex if i < 16 else held).append((t, ex))
            cfg = ModelConfig(
                d_src=8, d_trg=8, h=32, enc_layers=1, dec_layers=1, dlp_channels=16,
                lam=lam, focal_alpha=0.5, learn_rate=1e-3, batch_size=8, seed=seed,
            )
            state = init_state(cfg)
            train_loop(state, [ex for _, ex in train_ex], num_steps=150)
            accs = [
                frame_accuracy(predict_unintelligibility(state, t.l2_read), t.gold_dlabel)
                for t, _ in held
            ]
            return float(np.mean(accs))

        with_signal = np.mean([heldout_accuracy(1e3, s) for s in range(3)])
        without = np.mean([heldout_accuracy(0.0, s) for s in range(3)])
        assert with_signal >= without
