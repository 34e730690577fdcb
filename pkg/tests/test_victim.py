"""
verbose-samples — Victim captioner, shape-world corpus, training and checkpoints.

Tests cover:
  - pixel samples and decode policies
  - vocabulary encode/decode
  - generation contract (EOS, max_length, determinism, nucleus)
  - teacher-forced pass agrees with incremental decoding
  - input gradients agree with finite differences
  - shape-world determinism and export/load
  - training and checkpoint save/load
"""

from __future__ import annotations

import json
import warnings

import numpy as np
import pytest

from verbose_samples.attack.objectives import uncertainty_loss
from verbose_samples.core.config import TrainConfig, VictimConfig
from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError
from verbose_samples.core.numerics import finite_diff_grad
from verbose_samples.victim.checkpoint import MAGIC, load_checkpoint, read_header, save_checkpoint
from verbose_samples.victim.model import (
    build_victim,
    encode_image,
    encode_video,
    freeze,
    generate,
    input_gradient,
    loss_value,
    sequence_log_prob,
    teacher_forced_forward,
)
from verbose_samples.victim.samples import DecodePolicy, PixelSample, SampleKind
from verbose_samples.victim.shape_world import (
    caption_for, export_dataset, load_dataset, make_shape_world,
)
from verbose_samples.victim.train import make_batch, token_accuracy, train_toy
from verbose_samples.victim.vocab import VocabSpec


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# Helpers
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━

def _image_victim(seed: int = 0):
    return freeze(build_victim(VictimConfig.reduced("image"), seed))


def _video_victim(seed: int = 0):
    return freeze(build_victim(VictimConfig.reduced("video", n_frames=3), seed))


def _image_item(seed: int = 0):
    return make_shape_world(1, "image", seed, image_size=8)[0]


def _video_item(seed: int = 0):
    return make_shape_world(1, "video", seed, image_size=8, n_frames=3)[0]


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# Samples and vocabulary
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━

class TestPixelSample:
    def test_image_has_one_frame(self):
        s = PixelSample.image(np.full((8, 8, 3), 0.5))
        assert s.kind == SampleKind.IMAGE
        assert s.n_frames == 1 and s.spatial == (8, 8)

    def test_frames_are_read_only(self):
        s = PixelSample.image(np.zeros((8, 8, 3)))
        with pytest.raises(ValueError):
            s.frames[0, 0, 0, 0] = 1.0

    def test_out_of_range_rejected(self):
        with pytest.raises(VerboseSamplesError) as exc:
            PixelSample.image(np.full((8, 8, 3), 1.5))
        assert exc.value.code == FailCode.FAIL_CONSTRAINT_VIOLATION

    def test_image_with_two_frames_rejected(self):
        with pytest.raises(VerboseSamplesError) as exc:
            PixelSample(SampleKind.IMAGE, np.zeros((2, 8, 8, 3)))
        assert exc.value.code == FailCode.FAIL_SHAPE_MISMATCH

    def test_decode_policy_validation(self):
        assert DecodePolicy.nucleus(0.5).top_p == 0.5
        with pytest.raises(VerboseSamplesError):
            DecodePolicy("beam")


class TestVocab:
    def test_specials_first(self):
        v = VocabSpec.default(16)
        assert v.tokens[:3] == ("<pad>", "<bos>", "<eos>")
        assert v.size == 16

    def test_round_trip_caption(self):
        v = VocabSpec.default(64)
        text = "a red circle and a blue square"
        assert v.decode(v.encode(text)) == text

    def test_decode_stops_at_eos(self):
        v = VocabSpec.default(16)
        ids = v.encode("a red circle") + [v.eos_id] + v.encode("a blue square")
        assert v.decode(ids) == "a red circle"

    def test_unknown_word(self):
        with pytest.raises(VerboseSamplesError) as exc:
            VocabSpec.default(16).encode("a giraffe")
        assert exc.value.code == FailCode.FAIL_INVALID_TOKEN

    def test_check_ids(self):
        with pytest.raises(VerboseSamplesError) as exc:
            VocabSpec.default(16).check_ids([3, 16])
        assert exc.value.context["token"] == 16


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# Generation
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━

class TestGenerate:
    def test_greedy_is_deterministic(self):
        victim, item = _image_victim(), _image_item()
        a = generate(victim, item.sample, max_length=12)
        b = generate(victim, item.sample, max_length=12)
        assert a.tokens == b.tokens
        assert np.array_equal(a.distributions, b.distributions)

    def test_trace_contract(self):
        victim, item = _image_victim(), _image_item()
        trace = generate(victim, item.sample, max_length=12)
        vocab = victim.vocab
        assert 1 <= trace.length <= 12
        assert vocab.pad_id not in trace.tokens and vocab.bos_id not in trace.tokens
        assert vocab.eos_id not in trace.tokens[:-1]
        assert trace.distributions.shape == (trace.length, vocab.size)
        assert trace.distributions.sum(axis=1) == pytest.approx(np.ones(trace.length))
        assert trace.hidden_states.shape == (trace.length, victim.hidden_width)
        assert trace.attentions.shape == (trace.length, victim.config.n_patches)

    def test_suppress_eos_reaches_max_length(self):
        victim, item = _image_victim(), _image_item()
        trace = generate(victim, item.sample, max_length=10, suppress_eos=True)
        assert trace.length == 10
        assert not trace.stopped_on_eos

    def test_max_positions_guard(self):
        victim, item = _image_victim(), _image_item()
        with pytest.raises(VerboseSamplesError) as exc:
            generate(victim, item.sample, max_length=victim.config.max_positions)
        assert exc.value.code == FailCode.FAIL_CONFIG_INVALID

    def test_nucleus_needs_rng(self):
        victim, item = _image_victim(), _image_item()
        with pytest.raises(VerboseSamplesError):
            generate(victim, item.sample, policy=DecodePolicy.nucleus(), max_length=5)

    def test_nucleus_reproducible_per_seed(self):
        victim, item = _image_victim(), _image_item()
        a = generate(victim, item.sample, policy=DecodePolicy.nucleus(), max_length=12,
                     rng=np.random.default_rng(7))
        b = generate(victim, item.sample, policy=DecodePolicy.nucleus(), max_length=12,
                     rng=np.random.default_rng(7))
        assert a.tokens == b.tokens

    def test_kind_mismatch(self):
        victim, item = _image_victim(), _video_item()
        with pytest.raises(VerboseSamplesError) as exc:
            generate(victim, item.sample, max_length=4)
        assert exc.value.code == FailCode.FAIL_SHAPE_MISMATCH

    def test_sequence_log_prob_nonpositive(self):
        victim, item = _image_victim(), _image_item()
        trace = generate(victim, item.sample, max_length=8)
        assert sequence_log_prob(trace) <= 0.0

    def test_read_only_frames_raise_no_warning(self):
        victim, item = _video_victim(), _video_item()
        assert not item.sample.frames.flags.writeable
        with warnings.catch_warnings():
            warnings.simplefilter("error", UserWarning)
            generate(victim, item.sample, max_length=4)
            encode_video(victim, item.sample)
            teacher_forced_forward(victim, item.sample, [3, 4])


class TestEncoders:
    def test_encode_image_shape(self):
        victim, item = _image_victim(), _image_item()
        feats = encode_image(victim, item.sample.frames[0])
        assert feats.shape == (victim.config.n_patches, victim.config.d_model)

    def test_encode_image_bad_shape(self):
        with pytest.raises(VerboseSamplesError):
            encode_image(_image_victim(), np.zeros((4, 4, 3)))

    def test_encode_video_matches_trace(self):
        victim, item = _video_victim(), _video_item()
        h = encode_video(victim, item.sample)
        assert h.shape == (3, victim.config.d_model)
        trace = generate(victim, item.sample, max_length=4)
        assert trace.frame_features == pytest.approx(h, abs=1e-12)

    def test_frame_feature_depends_only_on_its_frame(self):
        victim, item = _video_victim(), _video_item()
        frames = np.array(item.sample.frames)
        frames[2] = 1.0 - frames[2]
        h0 = encode_video(victim, item.sample)
        h1 = encode_video(victim, item.sample.with_frames(frames))
        assert h1[:2] == pytest.approx(h0[:2], abs=1e-12)
        assert not np.allclose(h1[2], h0[2])


class TestTeacherForcing:
    @pytest.mark.parametrize("video", [False, True])
    def test_matches_incremental_decode(self, video):
        victim = _video_victim() if video else _image_victim()
        item = _video_item() if video else _image_item()
        trace = generate(victim, item.sample, max_length=10)
        fp = teacher_forced_forward(victim, item.sample, trace.tokens)
        assert fp.length == trace.length
        assert fp.logits.numpy() == pytest.approx(trace.logits, abs=1e-12)
        assert fp.hidden.numpy() == pytest.approx(trace.hidden_states, abs=1e-12)
        assert fp.attentions.numpy() == pytest.approx(trace.attentions, abs=1e-12)

    def test_input_gradient_matches_finite_differences(self):
        victim, item = _image_victim(), _image_item()
        trace = generate(victim, item.sample, max_length=6)
        frames = np.array(item.sample.frames)
        _, grad = input_gradient(victim, frames, trace.tokens, uncertainty_loss)
        idx = [0, 41, 97, 150, 191]
        numeric = finite_diff_grad(
            lambda x: loss_value(victim, x, trace.tokens, uncertainty_loss), frames, h=1e-5, indices=idx,
        )
        assert grad.reshape(-1)[idx] == pytest.approx(numeric.reshape(-1)[idx], rel=1e-4, abs=1e-8)

    def test_masked_frames_get_no_gradient(self):
        victim, item = _video_victim(), _video_item()
        trace = generate(victim, item.sample, max_length=6)
        _, grad = input_gradient(
            victim, item.sample.frames, trace.tokens, uncertainty_loss, frame_mask=[True, False, False],
        )
        assert np.any(grad[0] != 0.0)
        assert np.all(grad[1:] == 0.0)


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# Shape-world
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━

class TestShapeWorld:
    def test_deterministic(self):
        a = make_shape_world(4, "image", seed=3, image_size=8)
        b = make_shape_world(4, "image", seed=3, image_size=8)
        for x, y in zip(a, b):
            assert x.sample_id == y.sample_id
            assert x.caption == y.caption
            assert np.array_equal(x.sample.frames, y.sample.frames)

    def test_captions_follow_objects(self):
        ds = make_shape_world(10, "image", seed=0, image_size=8)
        for item in ds:
            assert 1 <= len(item.objects) <= 3
            assert item.caption == caption_for(item.objects)
        assert set(ds.object_counts().tolist()) <= {1, 2, 3}

    def test_video_frames(self):
        ds = make_shape_world(2, "video", seed=0, image_size=8, n_frames=4)
        assert ds[0].sample.frames.shape == (4, 8, 8, 3)

    def test_bad_image_size(self):
        with pytest.raises(VerboseSamplesError):
            make_shape_world(1, "image", image_size=6)

    def test_export_and_load(self, tmp_path):
        ds = make_shape_world(3, "image", seed=1, image_size=8)
        ds.items[0].meta["method"] = "original"
        export_dataset(ds, tmp_path)
        back = load_dataset(tmp_path)
        assert [it.sample_id for it in back] == [it.sample_id for it in ds]
        assert back[0].meta == {"method": "original"}
        assert back[1].objects == ds[1].objects
        assert np.array_equal(back[2].sample.frames, ds[2].sample.frames)

    def test_load_missing(self, tmp_path):
        with pytest.raises(VerboseSamplesError) as exc:
            load_dataset(tmp_path / "nope")
        assert exc.value.code == FailCode.FAIL_IO

    def test_empty_video_export_keeps_kind(self, tmp_path):
        ds = make_shape_world(0, "video", seed=5, image_size=8, n_frames=3)
        export_dataset(ds, tmp_path)
        back = load_dataset(tmp_path)
        assert back.kind == "video" and back.seed == 5
        assert len(back) == 0

    def test_empty_manifest_without_header(self, tmp_path):
        (tmp_path / "manifest.jsonl").write_text("", encoding="utf-8")
        with pytest.raises(VerboseSamplesError) as exc:
            load_dataset(tmp_path)
        assert exc.value.code == FailCode.FAIL_EMPTY_INPUT

    def test_row_kind_must_match_header(self, tmp_path):
        export_dataset(make_shape_world(1, "image", image_size=8), tmp_path)
        (tmp_path / "dataset.json").write_text(json.dumps({"kind": "video"}), encoding="utf-8")
        with pytest.raises(VerboseSamplesError) as exc:
            load_dataset(tmp_path)
        assert exc.value.code == FailCode.FAIL_SHAPE_MISMATCH


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# Training and checkpoints
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━

class TestTraining:
    def test_make_batch_masks_prompt(self):
        v = VocabSpec.default(16)
        inputs, labels = make_batch(v, [[3, 5], [3]], [[4], []])
        assert inputs.shape == labels.shape
        assert labels[0, 0].item() == -100          # prompt slot
        assert labels[0, 1:4].tolist() == [3, 5, v.eos_id]
        assert labels[1, :2].tolist() == [3, v.eos_id]
        assert labels[1, 2:].tolist() == [-100] * (labels.shape[1] - 2)

    def test_zero_epochs_returns_init(self):
        ds = make_shape_world(4, "image", image_size=8)
        model = train_toy(VictimConfig.reduced("image"), ds, TrainConfig(epochs=0), seed=5)
        ref = _image_victim(5)
        assert generate(model, ds[0].sample, max_length=6).tokens == \
            generate(ref, ds[0].sample, max_length=6).tokens

    def test_training_is_deterministic_and_frozen(self):
        ds = make_shape_world(8, "image", image_size=8)
        cfg = TrainConfig(epochs=2, batch_size=4)
        a = train_toy(VictimConfig.reduced("image"), ds, cfg, seed=1)
        b = train_toy(VictimConfig.reduced("image"), ds, cfg, seed=1)
        assert not any(p.requires_grad for p in a.parameters())
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa.numpy(), pb.numpy())
        assert 0.0 <= token_accuracy(a, ds) <= 1.0

    def test_kind_mismatch(self):
        ds = make_shape_world(2, "video", image_size=8, n_frames=3)
        with pytest.raises(VerboseSamplesError):
            train_toy(VictimConfig.reduced("image"), ds, TrainConfig(epochs=1))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        victim, item = _video_victim(2), _video_item()
        path = save_checkpoint(victim, tmp_path / "v.ckpt", {"note": "x"})
        loaded = load_checkpoint(path)
        assert loaded.config == victim.config
        assert loaded.vocab == victim.vocab
        a = generate(victim, item.sample, max_length=8)
        b = generate(loaded, item.sample, max_length=8)
        assert a.tokens == b.tokens
        assert np.array_equal(a.logits, b.logits)
        header, _ = read_header(path)
        assert header["meta"] == {"note": "x"}

    def test_same_bytes(self, tmp_path):
        victim = _image_victim(3)
        a = save_checkpoint(victim, tmp_path / "a.ckpt").read_bytes()
        b = save_checkpoint(victim, tmp_path / "b.ckpt").read_bytes()
        assert a == b and a.startswith(MAGIC)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"not a checkpoint at all")
        with pytest.raises(VerboseSamplesError) as exc:
            load_checkpoint(path)
        assert exc.value.code == FailCode.FAIL_CHECKPOINT_FORMAT

    def test_truncated_payload(self, tmp_path):
        path = save_checkpoint(_image_victim(), tmp_path / "t.ckpt")
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(VerboseSamplesError) as exc:
            load_checkpoint(path)
        assert exc.value.code == FailCode.FAIL_CHECKPOINT_FORMAT

    def test_payload_not_whole_floats(self, tmp_path):
        path = save_checkpoint(_image_victim(), tmp_path / "t.ckpt")
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(VerboseSamplesError) as exc:
            load_checkpoint(path)
        assert exc.value.code == FailCode.FAIL_CHECKPOINT_FORMAT
