"""
verbose-samples — PGD attack loop

    x′_t = Π_ε( x′_{t−1} − α · sign(∇ 𝓛(x′_{t−1})) )

Π_ε clips each pixel to [x − ε, x + ε] ∩ [0, 1]; for videos the clip is
per frame, which also bounds the mean of per-frame norms. The sequence
is re-decoded every ``redecode_period`` iterations and held fixed in
between; the loss weights follow the temporal schedule with momentum.
Baseline methods (noise, sponge, nicg) share the loop.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Sequence

import numpy as np
import torch
from numpy.typing import NDArray
from tqdm import tqdm

from verbose_samples.attack.gate import FeasibilityGate, GateResult
from verbose_samples.attack.objectives import BASELINES, LossVector, compute_losses
from verbose_samples.attack.schedule import WeightState
from verbose_samples.core.config import AttackConfig
from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError
from verbose_samples.core.state import IterationHistory, IterationRecord
from verbose_samples.victim.model import ToyCaptioner, generate, input_gradient
from verbose_samples.victim.samples import DecodePolicy, ForwardPass, PixelSample

log = logging.getLogger(__name__)


def _frames(x: PixelSample | NDArray[np.float64]) -> NDArray[np.float64]:
    return np.asarray(x.frames if isinstance(x, PixelSample) else x, dtype=np.float64)


# ---------------------------------------------------------------------------
# Projection and step
# ---------------------------------------------------------------------------
def project(
    perturbed: PixelSample | NDArray[np.float64],
    original: PixelSample | NDArray[np.float64],
    epsilon: float,
) -> PixelSample | NDArray[np.float64]:
    """Clip to the ε-box around *original*, then to [0, 1]. Returns the input's type."""
    x, x0 = _frames(perturbed), _frames(original)
    if x.shape != x0.shape:
        raise VerboseSamplesError(
            FailCode.FAIL_SHAPE_MISMATCH, f"perturbed {x.shape} vs original {x0.shape}",
        )
    out = np.clip(np.clip(x, x0 - epsilon, x0 + epsilon), 0.0, 1.0)
    if isinstance(perturbed, PixelSample):
        return perturbed.with_frames(out)
    return out


def pgd_step(
    perturbed: PixelSample | NDArray[np.float64],
    gradient: NDArray[np.float64],
    alpha: float,
    original: PixelSample | NDArray[np.float64],
    epsilon: float,
    iteration: int | None = None,
) -> PixelSample | NDArray[np.float64]:
    """x′ − α·sign(g), projected. sign(0) = 0."""
    g = np.asarray(gradient, dtype=np.float64)
    x = _frames(perturbed)
    if g.shape != x.shape:
        raise VerboseSamplesError(FailCode.FAIL_SHAPE_MISMATCH, f"gradient {g.shape} vs sample {x.shape}")
    if not np.all(np.isfinite(g)):
        raise VerboseSamplesError(
            FailCode.FAIL_NON_FINITE_GRADIENT, f"non-finite gradient at iteration {iteration}",
            iteration=iteration,
        )
    stepped = x - alpha * np.sign(g)
    out = project(stepped, original, epsilon)
    if isinstance(perturbed, PixelSample):
        return perturbed.with_frames(out)
    return out


def uniform_noise(
    sample: PixelSample,
    epsilon: float,
    rng: np.random.Generator,
) -> PixelSample:
    """Noise baseline: U(−ε, ε) per pixel, then projected."""
    x0 = _frames(sample)
    return project(sample.with_frames(np.clip(x0 + rng.uniform(-epsilon, epsilon, size=x0.shape), 0, 1)),
                   sample, epsilon)


# ---------------------------------------------------------------------------
# Objectives driven by the loop
# ---------------------------------------------------------------------------
class ScheduledObjective:
    """Composite 𝓛 with temporally adjusted, momentum-smoothed weights."""

    def __init__(self, config: AttackConfig) -> None:
        self.state = WeightState(schedule=config.schedule, momentum=config.effective_momentum)
        self.mask = tuple(1.0 if k in config.losses else 0.0 for k in (1, 2, 3))

    def weights(self, t: int) -> tuple[tuple[float, ...], tuple[float, ...], tuple[float, ...]]:
        smoothed = self.state.step(t)
        masked = tuple(w * m for w, m in zip(smoothed, self.mask))
        raw = tuple(w * m for w, m in zip(self.state.raw, self.mask))
        return raw, masked, self.state.decay_raw

    def loss(self, losses: LossVector, fp: ForwardPass, weights: Sequence[float]) -> torch.Tensor:
        return losses.weighted(weights)

    def observe(self, losses: tuple[float, float, float]) -> None:
        self.state.observe(losses)


class FixedObjective:
    """Single baseline objective with weight 1."""

    def __init__(self, fn: Callable[[ForwardPass], torch.Tensor]) -> None:
        self.fn = fn

    def weights(self, t: int) -> tuple[tuple[float, ...], tuple[float, ...], tuple[float, ...]]:
        return (0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (1.0, 1.0, 1.0)

    def loss(self, losses: LossVector, fp: ForwardPass, weights: Sequence[float]) -> torch.Tensor:
        return self.fn(fp)

    def observe(self, losses: tuple[float, float, float]) -> None:
        pass


# ---------------------------------------------------------------------------
# Loop
# ---------------------------------------------------------------------------
@dataclass
class AttackResult:
    method: str
    sample: PixelSample
    history: IterationHistory = field(default_factory=IterationHistory)
    gate: GateResult | None = None

    def __iter__(self) -> Iterator[Any]:
        return iter((self.sample, self.history))

    def summary(self) -> dict[str, Any]:
        lengths = self.history.lengths
        return {
            "method": self.method,
            "iterations": len(self.history),
            "initial_length": self.history.initial_length,
            "last_length": lengths[-1] if lengths else None,
            "max_length_seen": max(lengths) if lengths else None,
            "min_slack": self.history.min_slack,
            "gate": None if self.gate is None else self.gate.as_dict(),
        }


def _trainable_mask(n_frames: int, trainable_frames: Sequence[int] | None) -> NDArray[np.bool_] | None:
    if trainable_frames is None:
        return None
    mask = np.zeros(n_frames, dtype=bool)
    for j in trainable_frames:
        if not 0 <= int(j) < n_frames:
            raise VerboseSamplesError(
                FailCode.FAIL_CONFIG_INVALID, f"trainable frame {j} outside 0..{n_frames - 1}",
            )
        mask[int(j)] = True
    return mask


def _pgd_loop(
    victim: ToyCaptioner,
    sample: PixelSample,
    prompt: Sequence[int],
    config: AttackConfig,
    rng: np.random.Generator,
    objective: ScheduledObjective | FixedObjective,
    method: str,
    trainable_frames: Sequence[int] | None = None,
    progress: bool = False,
) -> AttackResult:
    x0 = _frames(sample)
    x = x0.copy()
    gate = FeasibilityGate(config.epsilon)
    history = IterationHistory()
    if config.iterations == 0:
        return AttackResult(method, sample, history, gate.check(x, x0))

    policy = DecodePolicy(config.decode_policy, config.top_p)
    diversity = config.diversity_for(sample.kind.value)
    frame_mask = _trainable_mask(sample.n_frames, trainable_frames)
    trace = generate(victim, sample, prompt, policy, config.max_length, rng=rng)
    history.initial_length = trace.length
    decoded_at = 0
    result_gate = None

    for t in tqdm(range(1, config.iterations + 1), desc=method, disable=not progress, leave=False):
        raw, weights, decay_raw = objective.weights(t)
        captured: dict[str, LossVector] = {}

        def loss_fn(fp: ForwardPass) -> torch.Tensor:
            lv = compute_losses(fp, diversity, config.normalize_diversity)
            captured["losses"] = lv
            return objective.loss(lv, fp, weights)

        try:
            value, grad = input_gradient(victim, x, trace.tokens, loss_fn, prompt)
        except VerboseSamplesError as exc:
            exc.context.setdefault("iteration", t)
            raise
        if frame_mask is not None:
            grad[~frame_mask] = 0.0
        x = pgd_step(x, grad, config.alpha, x0, config.epsilon, iteration=t)

        result_gate = gate.check(x, x0)
        if not result_gate.passed:
            raise VerboseSamplesError(
                FailCode.FAIL_CONSTRAINT_VIOLATION, f"iterate {t} infeasible: {result_gate.fail_reasons}",
                iteration=t,
            )
        losses = captured["losses"].values()
        objective.observe(losses)
        # the decode taken here drives the next redecode_period steps
        if t % config.redecode_period == 0 or t == config.iterations:
            trace = generate(victim, sample.with_frames(x), prompt, policy, config.max_length, rng=rng)
            decoded_at = t
        history.append(IterationRecord(
            t=t, losses=losses, raw_weights=raw, weights=weights, decay_raw=decay_raw,
            length=trace.length, slack=result_gate.slack, objective=value, decoded_at=decoded_at,
        ))
        log.debug("t=%d N=%d losses=%s weights=%s", t, trace.length, losses, weights)

    out = AttackResult(method, sample.with_frames(x), history, result_gate)
    log.info("%s attack: %d iterations, length %s → %s, min slack %.3g",
             method, len(history), history.initial_length, history.lengths[-1], history.min_slack)
    return out


def attack(
    victim: ToyCaptioner,
    sample: PixelSample,
    prompt: Sequence[int] = (),
    config: AttackConfig | None = None,
    rng: np.random.Generator | None = None,
    trainable_frames: Sequence[int] | None = None,
    progress: bool = False,
) -> AttackResult:
    """
    Verbose-sample attack. Unpacks as (verbose sample, IterationHistory);
    the final iterate is returned.
    """
    config = config or AttackConfig.for_modality(sample.kind.value)
    rng = rng if rng is not None else np.random.default_rng(0)
    return _pgd_loop(
        victim, sample, prompt, config, rng, ScheduledObjective(config), "verbose",
        trainable_frames=trainable_frames, progress=progress,
    )


def run_method(
    method: str,
    victim: ToyCaptioner,
    sample: PixelSample,
    prompt: Sequence[int] = (),
    config: AttackConfig | None = None,
    rng: np.random.Generator | None = None,
    trainable_frames: Sequence[int] | None = None,
    progress: bool = False,
) -> AttackResult:
    """Dispatch original | noise | sponge | nicg | verbose."""
    config = config or AttackConfig.for_modality(sample.kind.value)
    rng = rng if rng is not None else np.random.default_rng(0)
    if method == "original":
        return AttackResult(method, sample)
    if method == "noise":
        noisy = uniform_noise(sample, config.epsilon, rng)
        return AttackResult(method, noisy, gate=FeasibilityGate(config.epsilon).check(noisy.frames, sample.frames))
    if method in BASELINES:
        return _pgd_loop(
            victim, sample, prompt, config, rng, FixedObjective(BASELINES[method]), method,
            trainable_frames=trainable_frames, progress=progress,
        )
    if method == "verbose":
        return attack(victim, sample, prompt, config, rng, trainable_frames, progress)
    raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, f"unknown method {method!r}")
