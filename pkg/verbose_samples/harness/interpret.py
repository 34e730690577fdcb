"""
verbose-samples — Interpretation metrics

CHAIR hallucination rates over the closed shape-world grammar, attention
dispersion (entropy of the step-averaged attention row), gradient saliency
(|∂ Σ ln f_i[y_i] / ∂ pixel| summed over channels, with its mass and
spread) and L∞/RMSE perceptibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import torch
from numpy.typing import NDArray

from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError
from verbose_samples.core.numerics import entropy
from verbose_samples.victim.model import ToyCaptioner, backward_to_input
from verbose_samples.victim.samples import ForwardPass, GenerationTrace, PixelSample
from verbose_samples.victim.vocab import (
    COLORS, DISTRACTOR_COLORS, DISTRACTOR_SHAPES, SHAPE_SYNONYMS,
)

Mention = tuple[str | None, str]


# ---------------------------------------------------------------------------
# CHAIR
# ---------------------------------------------------------------------------
def parse_mentions(
    caption: str,
    synonyms: Mapping[str, str] = SHAPE_SYNONYMS,
) -> list[Mention]:
    """Object mentions as (color or None, shape); shapes mapped through *synonyms*."""
    colors = set(COLORS) | set(DISTRACTOR_COLORS)
    words = caption.lower().split()
    mentions: list[Mention] = []
    for i, w in enumerate(words):
        if w in synonyms:
            shape = synonyms[w]
        elif w in DISTRACTOR_SHAPES:
            shape = w
        else:
            continue
        color = words[i - 1] if i > 0 and words[i - 1] in colors else None
        mentions.append((color, shape))
    return mentions


def is_hallucinated(mention: Mention, truth: Sequence[tuple[str, str]]) -> bool:
    color, shape = mention
    if shape in DISTRACTOR_SHAPES or (color is not None and color in DISTRACTOR_COLORS):
        return True
    if color is None:
        return shape not in {s for _, s in truth}
    return (color, shape) not in set(map(tuple, truth))


@dataclass
class ChairResult:
    chair_i: float
    chair_s: float
    mentions: int
    hallucinated: int
    sentences: int
    flags: list[bool] = field(default_factory=list)

    def as_dict(self) -> dict[str, Any]:
        return {
            "chair_i": self.chair_i,
            "chair_s": self.chair_s,
            "mentions": self.mentions,
            "hallucinated": self.hallucinated,
            "sentences": self.sentences,
        }


def chair_metrics(
    captions: Sequence[str],
    ground_truths: Sequence[Sequence[tuple[str, str]]],
    synonyms: Mapping[str, str] = SHAPE_SYNONYMS,
) -> ChairResult:
    """CHAIR_i = hallucinated / all mentions; CHAIR_s = captions with any / all captions."""
    if not captions:
        raise VerboseSamplesError(FailCode.FAIL_EMPTY_INPUT, "chair_metrics needs at least one caption")
    if len(captions) != len(ground_truths):
        raise VerboseSamplesError(FailCode.FAIL_SHAPE_MISMATCH, "one ground-truth set per caption")
    total = bad = 0
    flags = []
    for cap, truth in zip(captions, ground_truths):
        ms = parse_mentions(cap, synonyms)
        h = sum(is_hallucinated(m, truth) for m in ms)
        total += len(ms)
        bad += h
        flags.append(h > 0)
    return ChairResult(
        chair_i=bad / total if total else 0.0,
        chair_s=sum(flags) / len(captions),
        mentions=total,
        hallucinated=bad,
        sentences=len(captions),
        flags=flags,
    )


# ---------------------------------------------------------------------------
# Attention dispersion
# ---------------------------------------------------------------------------
def attention_dispersion(trace: GenerationTrace) -> float:
    """H(mean_i attention_i) in nats; 0 for an empty trace."""
    if trace.length == 0:
        return 0.0
    mean = trace.attentions.mean(axis=0)
    return entropy(mean / mean.sum())


# ---------------------------------------------------------------------------
# Saliency
# ---------------------------------------------------------------------------
def _seq_log_prob(fp: ForwardPass) -> torch.Tensor:
    rows = torch.arange(fp.length)
    return fp.log_probs[rows, fp.tokens].sum()


def saliency_map(
    victim: ToyCaptioner,
    sample: PixelSample,
    trace: GenerationTrace,
    loss_fn: Callable[[ForwardPass], Any] | None = None,
    frame_mask: Sequence[bool] | None = None,
) -> NDArray[np.float64]:
    """(M, H, W) nonnegative map: channel-summed |∂ surrogate / ∂ pixel|."""
    grad = backward_to_input(
        victim, sample, trace.tokens, loss_fn or _seq_log_prob, trace.prompt, frame_mask,
    )
    return np.abs(grad).sum(axis=-1)


@dataclass
class SaliencySummary:
    mass: float                        # Σ of the map, the L1 norm of the input gradient
    entropy: float                     # nats over the normalized map; 0 when the map is zero
    frame_share: list[float]

    def as_dict(self) -> dict[str, Any]:
        return {"mass": self.mass, "entropy": self.entropy, "frame_share": list(self.frame_share)}


def saliency_summary(smap: NDArray[np.float64]) -> SaliencySummary:
    """Spread of a (M, H, W) saliency map over pixels and frames."""
    m = np.asarray(smap, dtype=np.float64)
    mass = float(m.sum())
    if mass <= 0.0:
        return SaliencySummary(0.0, 0.0, [0.0] * m.shape[0])
    per_frame = m.reshape(m.shape[0], -1).sum(axis=1)
    return SaliencySummary(mass, entropy(m.reshape(-1) / mass), (per_frame / mass).tolist())


# ---------------------------------------------------------------------------
# Perceptibility
# ---------------------------------------------------------------------------
def perceptibility(
    original: PixelSample | NDArray[np.float64],
    perturbed: PixelSample | NDArray[np.float64],
) -> tuple[float, float]:
    """(L∞, RMSE) of the pixel difference."""
    a = np.asarray(original.frames if isinstance(original, PixelSample) else original, dtype=np.float64)
    b = np.asarray(perturbed.frames if isinstance(perturbed, PixelSample) else perturbed, dtype=np.float64)
    if a.shape != b.shape:
        raise VerboseSamplesError(FailCode.FAIL_SHAPE_MISMATCH, f"{a.shape} vs {b.shape}")
    d = b - a
    if d.size == 0:
        return 0.0, 0.0
    return float(np.abs(d).max()), float(np.sqrt(np.mean(d * d)))
