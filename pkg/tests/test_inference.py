"""Tests for greedy/nucleus decoding and the sketch-level entry points."""

import random

import numpy as np
import pytest

import sketchvlm.inference as inference
from sketchvlm.data import make_example, synth_corpus
from sketchvlm.geometry import Entity, EntityKind, QPoint, Sketch
from sketchvlm.inference import (
    CheckpointMismatch,
    InvalidP,
    SampleSet,
    autoconstrain,
    complete,
    complete_many,
    greedy_decode,
    greedy_decode_batch,
    nucleus_filter,
    nucleus_sample,
)
from sketchvlm.model import Mode, ModelConfig, SketchVLM
from sketchvlm.tokens import (
    BOS,
    EOS,
    KIND_LINE,
    ENT_SEP,
    TokenSeq,
    Stream,
    decode_primitives,
)


def tiny_config(**kw):
    base = dict(d_model=16, n_heads=2, enc_layers=1, dec_layers=1, image_dec_layers=1)
    base.update(kw)
    return ModelConfig(**base)


class ScriptedModel(SketchVLM):
    """Real encoders, scripted decoder: at width w emit script[w-1]."""

    def __init__(self, script, **cfg_kw):
        super().__init__(tiny_config(use_image=False, **cfg_kw))
        self.script = script

    def step_logits(self, dec_input, fused, fused_valid):
        logits = np.zeros((dec_input.shape[0], self.cfg.vocab_size))
        pos = dec_input.shape[1] - 1
        if pos < len(self.script):
            logits[:, self.script[pos]] = 10.0
        else:
            logits[:, EOS] = 10.0
        return logits


def two_line_sketch():
    return Sketch(
        (
            Entity(EntityKind.LINE, (QPoint(1, 1), QPoint(30, 30))),
            Entity(EntityKind.LINE, (QPoint(30, 30), QPoint(60, 1))),
        )
    )


class TestNucleusFilter:
    def test_reference_distribution_keeps_top_three(self):
        probs = np.array([0.5, 0.3, 0.15, 0.05])
        ids, renormed = nucleus_filter(probs, 0.9)
        assert set(ids.tolist()) == {0, 1, 2}
        assert renormed.sum() == pytest.approx(1.0)
        assert renormed[0] == pytest.approx(0.5 / 0.95)

    def test_exact_boundary_is_inclusive(self):
        # Mass reaches exactly p at the second token; the set stops there.
        probs = np.array([0.6, 0.3, 0.1])
        ids, _ = nucleus_filter(probs, 0.9)
        assert set(ids.tolist()) == {0, 1}

    def test_tiny_p_is_greedy_argmax(self):
        probs = np.array([0.1, 0.6, 0.3])
        ids, renormed = nucleus_filter(probs, 1e-12)
        assert ids.tolist() == [1]
        assert renormed.tolist() == [1.0]

    def test_ties_resolve_to_lowest_id(self):
        probs = np.full(4, 0.25)
        ids, _ = nucleus_filter(probs, 0.2)
        assert ids.tolist() == [0]

    def test_p_one_keeps_everything(self):
        rng = np.random.default_rng(0)
        probs = rng.dirichlet(np.ones(85))
        ids, renormed = nucleus_filter(probs, 1.0)
        assert len(ids) == 85
        assert renormed.sum() == pytest.approx(1.0)

    @pytest.mark.parametrize("p", [0.0, -0.5, 1.5])
    def test_invalid_p(self, p):
        with pytest.raises(InvalidP):
            nucleus_filter(np.array([1.0]), p)

    def test_draws_never_leave_the_nucleus(self):
        probs = np.array([0.5, 0.3, 0.15, 0.05])
        ids, renormed = nucleus_filter(probs, 0.9)
        rng = np.random.default_rng(1)
        draws = rng.choice(ids, size=2000, p=renormed)
        assert set(np.unique(draws).tolist()) <= {0, 1, 2}

    def test_full_vocabulary_sampling_is_uniform(self):
        """p=1 over uniform probabilities: all bins within 3 sigma."""
        probs = np.full(85, 1.0 / 85)
        ids, renormed = nucleus_filter(probs, 1.0)
        rng = np.random.default_rng(2)
        draws = rng.choice(ids, size=100_000, p=renormed)
        counts = np.bincount(draws, minlength=85)
        expect = 100_000 / 85
        sigma = np.sqrt(100_000 * (1 / 85) * (1 - 1 / 85))
        assert np.all(np.abs(counts - expect) <= 3 * sigma)


class TestGreedy:
    def test_scripted_sequence_and_eos_stop(self):
        script = [KIND_LINE, 1, 1, 64, 64, ENT_SEP, EOS]
        model = ScriptedModel(script)
        out = greedy_decode(model, [BOS, EOS])
        assert out.tokens == [BOS, KIND_LINE, 1, 1, 64, 64, ENT_SEP, EOS]
        sk, flags = decode_primitives(out)
        assert flags == []
        assert len(sk.entities) == 1

    def test_immediate_eos_gives_empty_suffix(self):
        model = ScriptedModel([EOS])
        out = greedy_decode(model, [BOS, EOS])
        assert out.tokens == [BOS, EOS]
        sk, flags = decode_primitives(out)
        assert sk.entities == () and flags == []

    def test_argmax_tie_breaks_to_lowest_id(self):
        class TiedModel(ScriptedModel):
            def step_logits(self, dec_input, fused, fused_valid):
                logits = np.zeros((dec_input.shape[0], self.cfg.vocab_size))
                logits[:, 9] = 5.0
                logits[:, 5] = 5.0  # same score, lower id must win
                return logits

        model = TiedModel([])
        out = greedy_decode(model, [BOS, EOS])
        assert out.tokens[1] == 5

    def test_length_cap_without_eos(self):
        class NeverEOS(ScriptedModel):
            def step_logits(self, dec_input, fused, fused_valid):
                logits = np.zeros((dec_input.shape[0], self.cfg.vocab_size))
                logits[:, 7] = 5.0
                return logits

        out = greedy_decode(NeverEOS([]), [BOS, EOS])
        assert len(out.tokens) == inference.MAX_GEN
        assert EOS not in out.tokens

    def test_batch_rows_stop_independently(self):
        class PerRow(ScriptedModel):
            def step_logits(self, dec_input, fused, fused_valid):
                logits = np.zeros((dec_input.shape[0], self.cfg.vocab_size))
                w = dec_input.shape[1]
                logits[0, EOS if w >= 2 else 5] = 9.0
                logits[1, EOS if w >= 4 else 6] = 9.0
                return logits

        rows = greedy_decode_batch(PerRow([]), [[BOS, EOS], [BOS, EOS]], None)
        assert rows[0] == [BOS, 5, EOS]
        assert rows[1] == [BOS, 6, 6, 6, EOS]

    def test_deterministic(self):
        model = SketchVLM(tiny_config(use_image=False, seed=4))
        text = [BOS, KIND_LINE, 5, 5, 20, 20, ENT_SEP, EOS]
        a = greedy_decode(model, text)
        b = greedy_decode(model, text)
        assert a.tokens == b.tokens

    def test_untrained_output_always_decodes(self, monkeypatch):
        """Arbitrary checkpoints produce token soup that must still parse."""
        monkeypatch.setattr(inference, "MAX_GEN", 40)
        for seed in range(3):
            model = SketchVLM(tiny_config(use_image=False, seed=seed))
            rng = random.Random(seed)
            for s in synth_corpus(3, seed=seed).sketches:
                ex = make_example(s, rng)
                out = greedy_decode(model, ex.prefix)
                assert len(out.tokens) <= 40
                decode_primitives(out)  # must not raise

    def test_missing_image_input_rejected(self):
        model = SketchVLM(tiny_config())  # image channel enabled
        with pytest.raises(CheckpointMismatch):
            greedy_decode_batch(model, [[BOS, EOS]], None)

    def test_missing_text_input_rejected(self):
        model = SketchVLM(tiny_config(use_image=False))
        with pytest.raises(CheckpointMismatch):
            greedy_decode_batch(model, None, None)


class TestNucleusSampling:
    def test_seed_reproducibility(self):
        model = SketchVLM(tiny_config(use_image=False, seed=5))
        text = [BOS, KIND_LINE, 5, 5, 20, 20, ENT_SEP, EOS]
        a = nucleus_sample(model, text, p=0.9, seed=11, k=3)
        b = nucleus_sample(model, text, p=0.9, seed=11, k=3)
        assert [s.tokens for s in a.samples] == [s.tokens for s in b.samples]
        assert a.log_probs == b.log_probs

    def test_tiny_p_matches_greedy(self):
        script = [KIND_LINE, 2, 3, 4, 5, ENT_SEP, EOS]
        model = ScriptedModel(script)
        greedy = greedy_decode(model, [BOS, EOS])
        sampled = nucleus_sample(model, [BOS, EOS], p=1e-9, seed=0, k=2)
        for s in sampled.samples:
            assert s.tokens == greedy.tokens

    def test_invalid_p_rejected(self):
        model = SketchVLM(tiny_config(use_image=False))
        with pytest.raises(InvalidP):
            nucleus_sample(model, [BOS, EOS], p=0.0)

    def test_best_is_highest_log_prob(self):
        model = SketchVLM(tiny_config(use_image=False, seed=6))
        text = [BOS, KIND_LINE, 5, 5, 20, 20, ENT_SEP, EOS]
        result = nucleus_sample(model, text, p=0.95, seed=3, k=4)
        assert isinstance(result, SampleSet)
        best_idx = int(np.argmax(result.log_probs))
        assert result.best.tokens == result.samples[best_idx].tokens

    def test_length_cap(self, monkeypatch):
        monkeypatch.setattr(inference, "MAX_GEN", 20)

        class NeverEOS(ScriptedModel):
            def step_logits(self, dec_input, fused, fused_valid):
                logits = np.zeros((dec_input.shape[0], self.cfg.vocab_size))
                logits[:, 7] = 50.0
                return logits

        result = nucleus_sample(NeverEOS([]), [BOS, EOS], p=0.9, seed=0, k=1)
        assert len(result.samples[0].tokens) == 20


class TestCompletion:
    def test_empty_generation_returns_partial_unchanged(self):
        model = ScriptedModel([EOS])
        partial = two_line_sketch()
        result = complete(model, partial)
        assert result.sketch == partial
        assert result.flags == []

    def test_scripted_entity_is_appended(self):
        script = [KIND_LINE, 10, 10, 40, 40, ENT_SEP, EOS]
        model = ScriptedModel(script)
        partial = two_line_sketch()
        result = complete(model, partial)
        assert len(result.sketch.entities) == 3
        assert result.sketch.entities[2].kind is EntityKind.LINE
        assert result.sketch.constraints == partial.constraints

    def test_report_against_truth(self):
        truth = two_line_sketch()
        partial = Sketch(truth.entities[:1])
        # Script exactly the missing second line.
        script = [KIND_LINE, 30, 30, 60, 1, ENT_SEP, EOS]
        result = complete(ScriptedModel(script), partial, truth=truth)
        assert result.report.n_c == 2 and result.report.n_p == 2 and result.report.m == 2

    def test_wrong_mode_checkpoint_rejected(self):
        model = SketchVLM(tiny_config(mode=Mode.AUTOCONSTRAIN, use_image=False))
        with pytest.raises(CheckpointMismatch):
            complete(model, two_line_sketch())

    def test_many_matches_single(self):
        model = ScriptedModel([KIND_LINE, 10, 10, 40, 40, ENT_SEP, EOS])
        partials = [two_line_sketch(), Sketch(two_line_sketch().entities[:1])]
        many = complete_many(model, partials)
        assert len(many) == 2
        assert many[0].sketch.entities[:2] == partials[0].entities
        assert many[1].sketch.entities[:1] == partials[1].entities

    def test_output_stream_tag(self):
        result = complete(ScriptedModel([EOS]), two_line_sketch())
        assert result.tokens.stream is Stream.PRIMITIVE


class TestAutoconstrain:
    def test_wrong_mode_rejected(self):
        model = SketchVLM(tiny_config(use_image=False))
        with pytest.raises(CheckpointMismatch):
            autoconstrain(model, two_line_sketch())

    def test_scripted_constraint_resolves(self):
        from sketchvlm.geometry import ConstraintKind
        from sketchvlm.tokens import CONSTRAINT_TOKEN, CON_SEP

        s = two_line_sketch()
        # Script both entity blocks then a coincident token.
        script = (
            [KIND_LINE, 1, 1, 30, 30, ENT_SEP]
            + [KIND_LINE, 30, 30, 60, 1, ENT_SEP]
            + [CONSTRAINT_TOKEN[ConstraintKind.COINCIDENT], CON_SEP, EOS]
        )
        model = ScriptedModel(script, mode=Mode.AUTOCONSTRAIN)
        result = autoconstrain(model, s, with_report=True)
        assert len(result.constraints) == 1
        assert result.constraints[0].ctype is ConstraintKind.COINCIDENT
        assert result.constraints[0].refs == (0, 1)
        assert result.tokens.stream is Stream.CONSTRAINT

    def test_untrained_model_is_total(self, monkeypatch):
        monkeypatch.setattr(inference, "MAX_GEN", 40)
        model = SketchVLM(tiny_config(mode=Mode.AUTOCONSTRAIN, use_image=False, seed=7))
        result = autoconstrain(model, two_line_sketch())
        assert isinstance(result.constraints, list)
        for c in result.constraints:
            assert 0 <= min(c.refs) and max(c.refs) <= 1
