"""
verbose-samples — Attack objectives

Differentiable functionals of a teacher-forced pass (or a detached
GenerationTrace, via ``as_forward``). All are minimized by PGD:

    𝓛₁ = (1/N) Σ f_i[EOS]                    delayed EOS
    𝓛₂ = Σ (ln V − H(f_i))                   uncertainty (KL to uniform)
    𝓛₃ = −‖[g₁;…;g_N]‖_*   (image)          token diversity
       = −‖[h₁;…;h_M]‖_*   (video)          frame-feature diversity
    sponge = −Σ_layers ‖a‖²                  activation baseline
    nicg   = Σ (logit_i[EOS] + logit_i[y_i])  logit baseline
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Sequence, Union

import numpy as np
import torch

from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError
from verbose_samples.victim.samples import ForwardPass, GenerationTrace

log = logging.getLogger(__name__)

TraceLike = Union[ForwardPass, GenerationTrace]
LOSS_NAMES = ("delayed_eos", "uncertainty", "diversity")


def _forward(trace: TraceLike) -> ForwardPass:
    return trace.as_forward() if isinstance(trace, GenerationTrace) else trace


def _zero() -> torch.Tensor:
    return torch.zeros((), dtype=torch.float64)


def _neg_nuclear(m: torch.Tensor, normalize: bool) -> torch.Tensor:
    if m.ndim != 2:
        raise VerboseSamplesError(FailCode.FAIL_SHAPE_MISMATCH, f"stacked features must be 2-D, got {tuple(m.shape)}")
    if m.shape[0] == 0:
        return _zero()
    if normalize:
        m = m / math.sqrt(m.shape[0])
    try:
        return -torch.linalg.svdvals(m).sum()
    except RuntimeError as exc:
        raise VerboseSamplesError(FailCode.FAIL_SVD_NONCONVERGENCE, f"svd failed: {exc}") from exc


# ---------------------------------------------------------------------------
# Attack losses
# ---------------------------------------------------------------------------
def delayed_eos_loss(trace: TraceLike) -> torch.Tensor:
    fp = _forward(trace)
    if fp.length == 0:
        log.warning("delayed_eos_loss on an empty trace; returning 0")
        return _zero()
    return fp.probs[:, fp.eos_id].mean()


def uncertainty_loss(trace: TraceLike) -> torch.Tensor:
    """Σ_i D_KL(f_i ‖ 𝒰) computed as Σ_i (ln V − H(f_i))."""
    fp = _forward(trace)
    if fp.length == 0:
        return _zero()
    logp = fp.log_probs
    entropy = -(logp.exp() * logp).sum(dim=-1)
    return (math.log(fp.vocab_size) - entropy).sum()


def token_diversity_loss(trace: TraceLike, normalize: bool = False) -> torch.Tensor:
    return _neg_nuclear(_forward(trace).hidden, normalize)


def frame_diversity_loss(frame_features: Any, normalize: bool = False) -> torch.Tensor:
    """Accepts an (M, D) matrix or a pass/trace carrying frame features."""
    if isinstance(frame_features, (ForwardPass, GenerationTrace)):
        frame_features = _forward(frame_features).frame_features
    if frame_features is None:
        raise VerboseSamplesError(FailCode.FAIL_SHAPE_MISMATCH, "frame diversity needs video frame features")
    if not isinstance(frame_features, torch.Tensor):
        frame_features = torch.as_tensor(np.asarray(frame_features, dtype=np.float64))
    return _neg_nuclear(frame_features, normalize)


def diversity_loss(trace: TraceLike, diversity: str, normalize: bool = False) -> torch.Tensor:
    if diversity == "frame":
        return frame_diversity_loss(_forward(trace), normalize)
    if diversity == "token":
        return token_diversity_loss(trace, normalize)
    raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, f"unknown diversity loss {diversity!r}")


@dataclass
class LossVector:
    l1: torch.Tensor
    l2: torch.Tensor
    l3: torch.Tensor

    def __iter__(self):
        return iter((self.l1, self.l2, self.l3))

    def values(self) -> tuple[float, float, float]:
        return float(self.l1.detach()), float(self.l2.detach()), float(self.l3.detach())

    def weighted(self, weights: Sequence[float]) -> torch.Tensor:
        total = _zero()
        for w, loss in zip(weights, self):
            if w != 0.0:
                total = total + w * loss
        return total


def compute_losses(trace: TraceLike, diversity: str = "token", normalize: bool = False) -> LossVector:
    fp = _forward(trace)
    return LossVector(
        l1=delayed_eos_loss(fp),
        l2=uncertainty_loss(fp),
        l3=diversity_loss(fp, diversity, normalize),
    )


def composite_loss(
    weights: Sequence[float],
    trace: TraceLike,
    modality: str = "image",
    diversity: str | None = None,
    normalize: bool = False,
) -> torch.Tensor:
    """λ₁𝓛₁ + λ₂𝓛₂ + λ₃𝓛₃; 𝓛₃ is token diversity for images, frame diversity for videos."""
    w = [float(x) for x in weights]
    if len(w) != 3 or not all(math.isfinite(x) for x in w):
        raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, "composite_loss needs three finite weights")
    kind = diversity or ("frame" if modality == "video" else "token")
    fp = _forward(trace)
    total = _zero()
    if w[0]:
        total = total + w[0] * delayed_eos_loss(fp)
    if w[1]:
        total = total + w[1] * uncertainty_loss(fp)
    if w[2]:
        total = total + w[2] * diversity_loss(fp, kind, normalize)
    return total


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------
def sponge_objective(snapshot: Any) -> torch.Tensor:
    """−Σ_layers ‖a‖²; accepts a pass (its activations) or a list of arrays."""
    acts = snapshot.activations if isinstance(snapshot, ForwardPass) else snapshot
    total = _zero()
    for a in acts:
        t = a if isinstance(a, torch.Tensor) else torch.as_tensor(np.asarray(a, dtype=np.float64))
        total = total - (t * t).sum()
    return total


def nicg_objective(trace: TraceLike) -> torch.Tensor:
    """Σ_i (logit_i[EOS] + logit_i[y_i])."""
    fp = _forward(trace)
    if fp.length == 0:
        return _zero()
    rows = torch.arange(fp.length)
    return (fp.logits[:, fp.eos_id] + fp.logits[rows, fp.tokens]).sum()


BASELINES = {"sponge": sponge_objective, "nicg": nicg_objective}
