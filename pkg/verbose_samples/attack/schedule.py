"""
verbose-samples — Temporal loss-weight adjustment

    𝒯_k(t) = max(a_k ln t + b_k, τ_min)         (a_k = b_k = 0 → 𝒯_k ≡ 1)
    λ_k(t) = |𝓛₂(t−1)| / |𝓛_k(t−1)| / 𝒯_k(t)   (|𝓛_k| < 1e-12 → λ_k = 0)
    λ̄_k(t) = m λ̄_k(t−1) + (1 − m) λ_k(t)       (λ̄(1) = λ(1))

Weights are plain floats; nothing here carries gradients.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

from verbose_samples.core.config import WeightSchedule
from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError

log = logging.getLogger(__name__)

EXTINCT = 1e-12

Triple = tuple[float, float, float]


def raw_decay(t: int, a_k: float, b_k: float) -> float:
    """Unclamped a_k ln t + b_k; 1 when the decay is disabled (a_k = b_k = 0)."""
    if t < 1:
        raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, f"iteration must be >= 1, got {t}")
    if a_k == 0.0 and b_k == 0.0:
        return 1.0
    return a_k * math.log(t) + b_k


def temporal_decay(k: int, t: int, a_k: float, b_k: float, tau_min: float = 1e-3) -> float:
    """𝒯_k(t), clamped below at tau_min. *k* (1..3) only labels diagnostics."""
    value = raw_decay(t, a_k, b_k)
    if value < tau_min:
        log.debug("decay T_%d(%d) = %.6g clamped to %.6g", k, t, value, tau_min)
        return tau_min
    return value


def compute_weights(
    prev_losses: Sequence[float] | None,
    t: int,
    schedule: WeightSchedule,
) -> tuple[Triple, Triple]:
    """(λ(t), raw decay values). With no previous losses (t = 1) λ = (1, 1, 1)."""
    if schedule.use_decay:
        decay_raw = tuple(raw_decay(t, a, b) for a, b in zip(schedule.a, schedule.b))
    else:
        decay_raw = (1.0, 1.0, 1.0)
    if prev_losses is None or t == 1:
        return (1.0, 1.0, 1.0), decay_raw  # type: ignore[return-value]
    mags = [abs(float(x)) for x in prev_losses]
    ref = mags[1]
    weights = []
    for k, (mag, d) in enumerate(zip(mags, decay_raw), start=1):
        if mag < EXTINCT:
            weights.append(0.0)
            continue
        tau = max(d, schedule.tau_min)
        if d < schedule.tau_min:
            log.debug("decay T_%d(%d) = %.6g clamped to %.6g", k, t, d, schedule.tau_min)
        weights.append(ref / mag / tau)
    return tuple(weights), decay_raw  # type: ignore[return-value]


def momentum_update(prev: Sequence[float], raw: Sequence[float], m: float) -> Triple:
    """λ̄(t) = m·λ̄(t−1) + (1 − m)·λ_raw(t)."""
    if not 0.0 <= m < 1.0:
        raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, f"momentum must lie in [0, 1), got {m}")
    return tuple(m * p + (1.0 - m) * r for p, r in zip(prev, raw))  # type: ignore[return-value]


@dataclass
class WeightState:
    """Raw and momentum-smoothed loss weights plus the magnitudes they came from."""

    schedule: WeightSchedule = field(default_factory=WeightSchedule)
    momentum: float = 0.9
    raw: Triple = (1.0, 1.0, 1.0)
    smoothed: Triple = (1.0, 1.0, 1.0)
    decay_raw: Triple = (1.0, 1.0, 1.0)
    prev_losses: Triple | None = None
    t: int = 0
    clamped: bool = False

    def step(self, t: int) -> Triple:
        """Advance to iteration t using the stored losses of t − 1."""
        self.raw, self.decay_raw = compute_weights(self.prev_losses, t, self.schedule)
        if self.t == 0:
            self.smoothed = self.raw
        else:
            self.smoothed = momentum_update(self.smoothed, self.raw, self.momentum)
        if not self.clamped and any(d < self.schedule.tau_min for d in self.decay_raw):
            self.clamped = True
            log.warning("temporal decay below tau_min=%g at t=%d (raw=%s); clamped",
                        self.schedule.tau_min, t, [round(d, 6) for d in self.decay_raw])
        self.t = t
        return self.smoothed

    def observe(self, losses: Sequence[float]) -> None:
        self.prev_losses = tuple(float(x) for x in losses)  # type: ignore[assignment]

    def snapshot(self) -> dict[str, Any]:
        return {
            "t": self.t,
            "raw": list(self.raw),
            "smoothed": list(self.smoothed),
            "decay_raw": list(self.decay_raw),
            "prev_losses": None if self.prev_losses is None else list(self.prev_losses),
        }
