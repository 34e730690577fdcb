"""
verbose-samples — Attack objectives.

Tests cover:
  - delayed-EOS, uncertainty and diversity losses on hand-built passes
  - composite weighting and modality dispatch
  - baseline objectives (sponge, nicg)
  - gradients through a real victim
"""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from verbose_samples.attack.objectives import (
    LossVector,
    composite_loss,
    compute_losses,
    delayed_eos_loss,
    diversity_loss,
    frame_diversity_loss,
    nicg_objective,
    sponge_objective,
    token_diversity_loss,
    uncertainty_loss,
)
from verbose_samples.core.config import VictimConfig
from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError
from verbose_samples.victim.model import backward_to_input, build_victim, freeze, generate, input_gradient
from verbose_samples.victim.samples import ForwardPass
from verbose_samples.victim.shape_world import make_shape_world

EOS = 2


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# Helpers
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━

def _pass(probs, tokens=None, hidden=None, frame_features=None) -> ForwardPass:
    probs = np.asarray(probs, dtype=np.float64)
    tokens = list(range(probs.shape[0])) if tokens is None else tokens
    return ForwardPass.from_probs(probs, tokens, EOS, hidden=hidden, frame_features=frame_features)


def _f(t: torch.Tensor) -> float:
    return float(t.detach())


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# Losses
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━

class TestDelayedEOS:
    def test_mean_eos_probability(self):
        fp = _pass([[0.25, 0.25, 0.5, 0.0], [0.4, 0.4, 0.1, 0.1]])
        assert _f(delayed_eos_loss(fp)) == pytest.approx(0.3, abs=1e-9)

    def test_empty_trace_is_zero(self):
        fp = _pass(np.zeros((0, 4)))
        assert _f(delayed_eos_loss(fp)) == 0.0

    def test_bounded(self):
        rng = np.random.default_rng(0)
        p = rng.dirichlet(np.ones(5), size=6)
        assert 0.0 <= _f(delayed_eos_loss(_pass(p))) <= 1.0


class TestUncertainty:
    def test_uniform_rows_are_zero(self):
        fp = _pass(np.full((3, 4), 0.25))
        assert _f(uncertainty_loss(fp)) == pytest.approx(0.0, abs=1e-12)

    def test_sums_over_steps(self):
        fp = _pass([[1.0, 0.0, 0.0, 0.0], [0.25, 0.25, 0.25, 0.25]])
        assert _f(uncertainty_loss(fp)) == pytest.approx(math.log(4), abs=1e-9)

    def test_nonnegative(self):
        p = np.random.default_rng(1).dirichlet(np.ones(6), size=5)
        assert _f(uncertainty_loss(_pass(p))) >= 0.0


class TestDiversity:
    def test_token_diversity_is_negative_nuclear_norm(self):
        fp = _pass(np.full((2, 4), 0.25), hidden=np.diag([3.0, 1.0]))
        assert _f(token_diversity_loss(fp)) == pytest.approx(-4.0)

    def test_normalized(self):
        fp = _pass(np.full((4, 4), 0.25), hidden=np.eye(4) * 2.0)
        assert _f(token_diversity_loss(fp, normalize=True)) == pytest.approx(-8.0 / 2.0)

    def test_frame_diversity_from_matrix(self):
        h = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        assert _f(frame_diversity_loss(h)) == pytest.approx(-2.0)

    def test_frame_diversity_needs_features(self):
        with pytest.raises(VerboseSamplesError) as exc:
            frame_diversity_loss(_pass(np.full((1, 4), 0.25)))
        assert exc.value.code == FailCode.FAIL_SHAPE_MISMATCH

    def test_unknown_variant(self):
        with pytest.raises(VerboseSamplesError):
            diversity_loss(_pass(np.full((1, 4), 0.25)), "pixel")

    def test_identical_rows_lower_diversity(self):
        same = _pass(np.full((3, 4), 0.25), hidden=np.ones((3, 3)))
        spread = _pass(np.full((3, 4), 0.25), hidden=np.eye(3) * math.sqrt(3))
        # equal Frobenius norm; orthogonal rows have the larger nuclear norm
        assert _f(token_diversity_loss(spread)) < _f(token_diversity_loss(same))

    def test_token_diversity_ignores_row_order(self):
        hidden = np.random.default_rng(3).normal(size=(5, 4))
        perm = [3, 0, 4, 1, 2]
        a = _pass(np.full((5, 4), 0.25), hidden=hidden)
        b = _pass(np.full((5, 4), 0.25), hidden=hidden[perm])
        assert _f(token_diversity_loss(b)) == pytest.approx(_f(token_diversity_loss(a)), rel=1e-12)


class TestComposite:
    def test_weights_select_terms(self):
        fp = _pass([[0.25, 0.25, 0.5, 0.0], [0.4, 0.4, 0.1, 0.1]], hidden=np.diag([3.0, 1.0]))
        lv = compute_losses(fp)
        l1, l2, l3 = lv.values()
        assert _f(composite_loss((1, 0, 0), fp)) == pytest.approx(l1)
        assert _f(composite_loss((0, 1, 0), fp)) == pytest.approx(l2)
        assert _f(composite_loss((0, 0, 1), fp)) == pytest.approx(l3)
        assert _f(composite_loss((2, 3, 0.5), fp)) == pytest.approx(2 * l1 + 3 * l2 + 0.5 * l3)
        assert _f(lv.weighted((2, 3, 0.5))) == pytest.approx(2 * l1 + 3 * l2 + 0.5 * l3)

    def test_video_uses_frame_features(self):
        ff = np.diag([2.0, 1.0, 1.0])
        fp = _pass(np.full((2, 4), 0.25), hidden=np.zeros((2, 2)), frame_features=ff)
        assert _f(composite_loss((0, 0, 1), fp, modality="video")) == pytest.approx(-4.0)
        assert _f(composite_loss((0, 0, 1), fp, modality="image")) == pytest.approx(0.0, abs=1e-12)

    def test_non_finite_weight(self):
        fp = _pass(np.full((1, 4), 0.25))
        with pytest.raises(VerboseSamplesError) as exc:
            composite_loss((1.0, float("nan"), 0.0), fp)
        assert exc.value.code == FailCode.FAIL_CONFIG_INVALID

    def test_loss_vector_iterates(self):
        lv = LossVector(torch.tensor(1.0), torch.tensor(2.0), torch.tensor(3.0))
        assert lv.values() == (1.0, 2.0, 3.0)


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# Baselines
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━

class TestBaselines:
    def test_sponge_on_arrays(self):
        acts = [np.array([1.0, 2.0]), np.array([[3.0]])]
        assert _f(sponge_objective(acts)) == pytest.approx(-(1 + 4 + 9))

    def test_nicg_logits(self):
        p = np.array([[0.1, 0.2, 0.3, 0.4], [0.25, 0.25, 0.25, 0.25]])
        fp = _pass(p, tokens=[3, 2])
        expected = (math.log(0.3) + math.log(0.4)) + (math.log(0.25) + math.log(0.25))
        assert _f(nicg_objective(fp)) == pytest.approx(expected)


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# Through the victim
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━

class TestVictimGradients:
    def test_composite_gradient_is_linear_in_the_weights(self):
        victim = freeze(build_victim(VictimConfig.reduced("image"), seed=0))
        item = make_shape_world(1, "image", seed=0, image_size=8)[0]
        trace = generate(victim, item.sample, max_length=8)
        weights = (2.0, 3.0, 0.5)
        parts = [
            backward_to_input(victim, item.sample, trace.tokens, lambda fp, w=unit: composite_loss(w, fp))
            for unit in np.eye(3)
        ]
        total = backward_to_input(victim, item.sample, trace.tokens, lambda fp: composite_loss(weights, fp))
        expected = sum(w * g for w, g in zip(weights, parts))
        assert total == pytest.approx(expected, rel=1e-9, abs=1e-12)

    @pytest.mark.parametrize("kind", ["image", "video"])
    def test_composite_gradient_is_finite(self, kind):
        victim = freeze(build_victim(VictimConfig.reduced(kind, n_frames=3), seed=0))
        item = make_shape_world(1, kind, seed=0, image_size=8, n_frames=3)[0]
        trace = generate(victim, item.sample, max_length=8)
        value, grad = input_gradient(
            victim, item.sample.frames, trace.tokens,
            lambda fp: composite_loss((1.0, 1.0, 1.0), fp, modality=kind),
        )
        assert math.isfinite(value)
        assert grad.shape == item.sample.frames.shape
        assert np.all(np.isfinite(grad)) and np.any(grad != 0.0)

    def test_sponge_through_pass(self):
        victim = freeze(build_victim(VictimConfig.reduced("image"), seed=0))
        item = make_shape_world(1, "image", seed=0, image_size=8)[0]
        trace = generate(victim, item.sample, max_length=4)
        _, grad = input_gradient(victim, item.sample.frames, trace.tokens, sponge_objective)
        assert np.any(grad != 0.0)

    def test_trace_and_pass_agree(self):
        victim = freeze(build_victim(VictimConfig.reduced("image"), seed=0))
        item = make_shape_world(1, "image", seed=0, image_size=8)[0]
        trace = generate(victim, item.sample, max_length=8)
        from_trace = compute_losses(trace).values()
        value, _ = input_gradient(victim, item.sample.frames, trace.tokens, lambda fp: compute_losses(fp).l1)
        assert from_trace[0] == pytest.approx(float(np.mean(trace.distributions[:, victim.vocab.eos_id])))
        assert value == pytest.approx(from_trace[0], abs=1e-8)
