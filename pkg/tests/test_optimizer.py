"""
verbose-samples — Weight schedule, projection and the PGD attack loop.

Tests cover:
  - temporal decay, weight computation, momentum
  - projection, signed step, feasibility gate
  - attack loop: feasibility every iterate, determinism, frame masks,
    loss subsets, momentum off, redecode period
  - baseline methods
"""

from __future__ import annotations

import logging
import math

import numpy as np
import pytest

from verbose_samples.attack.gate import FeasibilityGate
from verbose_samples.attack.pgd import attack, pgd_step, project, run_method, uniform_noise
from verbose_samples.attack.schedule import (
    WeightState, compute_weights, momentum_update, raw_decay, temporal_decay,
)
from verbose_samples.core.config import AttackConfig, VictimConfig, WeightSchedule
from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError
from verbose_samples.victim.model import build_victim, freeze, generate
from verbose_samples.victim.samples import PixelSample
from verbose_samples.victim.shape_world import make_shape_world

EPS = 8 / 255


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# Helpers
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━

def _setup(kind: str = "image"):
    victim = freeze(build_victim(VictimConfig.reduced(kind, n_frames=3), seed=0))
    item = make_shape_world(1, kind, seed=0, image_size=8, n_frames=3)[0]
    return victim, item.sample


def _config(kind: str = "image", **kw) -> AttackConfig:
    base = {"iterations": 4, "max_length": 8, "epsilon": EPS, "alpha": 2 / 255}
    base.update(kw)
    return AttackConfig.for_modality(kind, **base)


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# Schedule
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━

class TestTemporalDecay:
    def test_disabled_pair_is_one(self):
        assert raw_decay(17, 0.0, 0.0) == 1.0

    def test_log_form(self):
        assert raw_decay(5, 0.5, 1.0) == pytest.approx(0.5 * math.log(5) + 1.0)

    def test_clamped_at_tau_min(self):
        assert temporal_decay(1, 2, 10.0, -20.0, tau_min=1e-3) == 1e-3

    def test_iteration_must_be_positive(self):
        with pytest.raises(VerboseSamplesError):
            raw_decay(0, 1.0, 1.0)


class TestComputeWeights:
    def test_first_iteration_is_unit(self):
        w, _ = compute_weights(None, 1, WeightSchedule())
        assert w == (1.0, 1.0, 1.0)

    def test_balances_against_uncertainty(self):
        sched = WeightSchedule(use_decay=False)
        w, decay = compute_weights((2.0, 4.0, -8.0), 3, sched)
        assert w == pytest.approx((2.0, 1.0, 0.5))
        assert decay == (1.0, 1.0, 1.0)

    def test_default_image_schedule(self):
        w, decay = compute_weights((2.0, 4.0, -8.0), 2, WeightSchedule())
        t3 = 0.5 * math.log(2) + 1.0
        assert decay[0] == pytest.approx(10 * math.log(2) - 20)
        assert w == pytest.approx((4.0 / 2.0 / 1e-3, 1.0, 0.5 / t3))

    def test_extinct_loss_gets_zero_weight(self):
        w, _ = compute_weights((0.0, 4.0, 1e-15), 2, WeightSchedule(use_decay=False))
        assert w == (0.0, 1.0, 0.0)

    def test_video_schedule_constants(self):
        sched = WeightSchedule.for_modality("video")
        assert sched.a == (10000.0, 0.0, 5.0)
        assert sched.b == (100000.0, 0.0, 500.0)


class TestMomentum:
    def test_blend(self):
        assert momentum_update((1.0, 1.0, 1.0), (2.0, 0.0, 1.0), 0.9) == pytest.approx((1.1, 0.9, 1.0))

    def test_three_steps_from_zero(self):
        smoothed = (0.0, 0.0, 0.0)
        for _ in range(3):
            smoothed = momentum_update(smoothed, (1.0, 1.0, 1.0), 0.9)
        assert smoothed == pytest.approx((0.271, 0.271, 0.271), abs=1e-12)

    def test_zero_momentum_is_raw(self):
        assert momentum_update((5.0, 5.0, 5.0), (1.0, 2.0, 3.0), 0.0) == (1.0, 2.0, 3.0)

    def test_out_of_range(self):
        with pytest.raises(VerboseSamplesError):
            momentum_update((1.0,) * 3, (1.0,) * 3, 1.0)

    def test_weight_state(self):
        state = WeightState(schedule=WeightSchedule(use_decay=False), momentum=0.5)
        assert state.step(1) == (1.0, 1.0, 1.0)
        state.observe((2.0, 4.0, -8.0))
        assert state.step(2) == pytest.approx((1.5, 1.0, 0.75))
        snap = state.snapshot()
        assert snap["t"] == 2 and snap["raw"] == pytest.approx([2.0, 1.0, 0.5])

    def test_clamp_warns_once(self, caplog):
        state = WeightState(schedule=WeightSchedule(), momentum=0.9)
        with caplog.at_level(logging.WARNING, logger="verbose_samples.attack.schedule"):
            state.step(1)
            state.observe((1.0, 1.0, 1.0))
            state.step(2)
        assert state.clamped
        assert sum("clamped" in r.message for r in caplog.records) == 1


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# Projection, step, gate
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━

class TestProjection:
    def test_box_and_range(self):
        x0 = np.array([[[[0.0, 0.5, 1.0]]]])
        x = np.array([[[[0.5, 0.9, 0.2]]]])
        out = project(x, x0, 0.1)
        assert out == pytest.approx(np.array([[[[0.1, 0.6, 0.9]]]]))

    def test_clip_to_unit_interval(self):
        x0 = np.array([[[[0.02, 0.98, 0.5]]]])
        out = project(x0 + np.array([-0.1, 0.1, 0.0]), x0, 0.1)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_preserves_sample_type(self):
        s = PixelSample.image(np.full((2, 2, 3), 0.5))
        assert isinstance(project(s, s, 0.1), PixelSample)

    def test_shape_mismatch(self):
        with pytest.raises(VerboseSamplesError):
            project(np.zeros((1, 2, 2, 3)), np.zeros((1, 3, 3, 3)), 0.1)


class TestPGDStep:
    def test_signed_descent(self):
        x0 = np.full((1, 1, 2, 3), 0.5)
        g = np.array([[[[1.0, -2.0, 0.0], [0.3, 0.0, -0.1]]]])
        out = pgd_step(x0, g, 0.01, x0, 0.1)
        assert out == pytest.approx(x0 - 0.01 * np.sign(g))

    def test_non_finite_gradient(self):
        x0 = np.full((1, 1, 1, 3), 0.5)
        with pytest.raises(VerboseSamplesError) as exc:
            pgd_step(x0, np.array([[[[np.nan, 0.0, 0.0]]]]), 0.01, x0, 0.1, iteration=7)
        assert exc.value.code == FailCode.FAIL_NON_FINITE_GRADIENT
        assert exc.value.context["iteration"] == 7


class TestGate:
    def test_passes_inside_ball(self):
        x0 = np.full((2, 2, 2, 3), 0.5)
        res = FeasibilityGate(0.1).check(x0 + 0.05, x0)
        assert res.passed
        assert res.slack == pytest.approx(0.05)

    def test_fails_outside_ball(self):
        x0 = np.full((1, 2, 2, 3), 0.5)
        res = FeasibilityGate(0.1).check(x0 + 0.2, x0)
        assert not res.passed
        assert any("frame 0" in r for r in res.fail_reasons)

    def test_fails_out_of_range(self):
        x0 = np.full((1, 1, 1, 3), 0.95)
        res = FeasibilityGate(0.1).check(x0 + 0.08, x0)
        assert not res.passed

    def test_zero_perturbation_warns(self):
        x0 = np.full((1, 1, 1, 3), 0.5)
        res = FeasibilityGate(0.1).check(x0, x0)
        assert res.passed and res.warnings


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# Attack loop
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━

class TestAttack:
    @pytest.mark.parametrize("kind", ["image", "video"])
    def test_every_iterate_feasible(self, kind):
        victim, sample = _setup(kind)
        result = attack(victim, sample, config=_config(kind), rng=np.random.default_rng(0))
        assert len(result.history) == 4
        assert all(r.slack >= -1e-12 for r in result.history)
        assert result.gate is not None and result.gate.passed
        x, x0 = np.asarray(result.sample.frames), np.asarray(sample.frames)
        assert np.abs(x - x0).max() <= EPS + 1e-12
        assert x.min() >= 0.0 and x.max() <= 1.0

    def test_unpacks_to_sample_and_history(self):
        victim, sample = _setup()
        adv, history = attack(victim, sample, config=_config(), rng=np.random.default_rng(0))
        assert isinstance(adv, PixelSample)
        assert history.lengths == [r.length for r in history]

    def test_deterministic(self):
        victim, sample = _setup()
        a = attack(victim, sample, config=_config(), rng=np.random.default_rng(1))
        b = attack(victim, sample, config=_config(), rng=np.random.default_rng(1))
        assert np.array_equal(a.sample.frames, b.sample.frames)
        assert [r.as_dict() for r in a.history] == [r.as_dict() for r in b.history]

    def test_zero_iterations_returns_original(self):
        victim, sample = _setup()
        result = attack(victim, sample, config=_config(iterations=0))
        assert np.array_equal(result.sample.frames, sample.frames)
        assert len(result.history) == 0

    def test_trainable_frames(self):
        victim, sample = _setup("video")
        result = attack(victim, sample, config=_config("video"), rng=np.random.default_rng(0),
                        trainable_frames=[1])
        x, x0 = np.asarray(result.sample.frames), np.asarray(sample.frames)
        assert np.array_equal(x[0], x0[0]) and np.array_equal(x[2], x0[2])

    def test_bad_trainable_frame(self):
        victim, sample = _setup("video")
        with pytest.raises(VerboseSamplesError) as exc:
            attack(victim, sample, config=_config("video"), trainable_frames=[3])
        assert exc.value.code == FailCode.FAIL_CONFIG_INVALID

    def test_first_iteration_weights_are_unit(self):
        victim, sample = _setup()
        history = attack(victim, sample, config=_config(), rng=np.random.default_rng(0)).history
        assert history.records[0].weights == (1.0, 1.0, 1.0)

    def test_loss_subset_masks_weights(self):
        victim, sample = _setup()
        history = attack(victim, sample, config=_config(losses=(2,)), rng=np.random.default_rng(0)).history
        for r in history:
            assert r.weights[0] == 0.0 and r.weights[2] == 0.0
            assert r.weights[1] == pytest.approx(1.0)

    def test_momentum_off_uses_raw_weights(self):
        victim, sample = _setup()
        history = attack(victim, sample, config=_config(use_momentum=False),
                         rng=np.random.default_rng(0)).history
        for r in history:
            assert r.weights == pytest.approx(r.raw_weights)

    def test_redecode_period_holds_sequence(self):
        victim, sample = _setup()
        history = attack(victim, sample, config=_config(redecode_period=3),
                         rng=np.random.default_rng(0)).history
        assert [r.decoded_at for r in history] == [0, 0, 3, 4]
        lengths = history.lengths
        assert lengths[0] == lengths[1] == history.initial_length

    @pytest.mark.parametrize("period", [1, 3])
    def test_recorded_length_tracks_current_iterate(self, period):
        victim, sample = _setup()
        result = attack(victim, sample, config=_config(redecode_period=period),
                        rng=np.random.default_rng(0))
        assert result.history.initial_length == generate(victim, sample, max_length=8).length
        assert result.history.records[-1].decoded_at == 4
        assert result.history.lengths[-1] == generate(victim, result.sample, max_length=8).length

    def test_history_serializes(self):
        victim, sample = _setup()
        history = attack(victim, sample, config=_config(iterations=2), rng=np.random.default_rng(0)).history
        lines = history.to_jsonl().splitlines()
        assert len(lines) == 2 and '"t": 1' in lines[0]


class TestMethods:
    def test_original_is_identity(self):
        victim, sample = _setup()
        assert run_method("original", victim, sample, config=_config()).sample is sample

    def test_noise_inside_ball(self):
        victim, sample = _setup()
        res = run_method("noise", victim, sample, config=_config(), rng=np.random.default_rng(0))
        assert res.gate.passed
        assert np.abs(np.asarray(res.sample.frames) - sample.frames).max() <= EPS + 1e-12

    def test_uniform_noise_reproducible(self):
        _, sample = _setup()
        a = uniform_noise(sample, EPS, np.random.default_rng(4))
        b = uniform_noise(sample, EPS, np.random.default_rng(4))
        assert np.array_equal(a.frames, b.frames)

    @pytest.mark.parametrize("method", ["sponge", "nicg"])
    def test_baselines_run_the_loop(self, method):
        victim, sample = _setup()
        res = run_method(method, victim, sample, config=_config(iterations=2), rng=np.random.default_rng(0))
        assert res.method == method
        assert len(res.history) == 2 and res.gate.passed

    def test_unknown_method(self):
        victim, sample = _setup()
        with pytest.raises(VerboseSamplesError):
            run_method("magic", victim, sample, config=_config())
