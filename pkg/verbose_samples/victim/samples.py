"""
verbose-samples — Pixel samples, decode policies, generation traces

PixelSample is the attack variable (an image is a one-frame sample).
GenerationTrace is one detached autoregressive decode; ForwardPass is the
differentiable teacher-forced counterpart the objectives consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
import torch
from numpy.typing import NDArray

from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError


class SampleKind(str, Enum):
    IMAGE = "image"
    VIDEO = "video"


@dataclass(frozen=True, eq=False)
class PixelSample:
    """M ordered H×W×3 frames with every pixel in [0, 1]."""

    kind: SampleKind
    frames: NDArray[np.float64]

    def __post_init__(self) -> None:
        f = np.array(self.frames, dtype=np.float64)
        if f.ndim != 4 or f.shape[-1] != 3 or f.shape[0] < 1:
            raise VerboseSamplesError(
                FailCode.FAIL_SHAPE_MISMATCH, f"frames must be (M, H, W, 3), got {f.shape}",
            )
        if not np.all(np.isfinite(f)):
            raise VerboseSamplesError(FailCode.FAIL_NON_FINITE, "pixels must be finite")
        if f.min() < 0.0 or f.max() > 1.0:
            raise VerboseSamplesError(
                FailCode.FAIL_CONSTRAINT_VIOLATION,
                f"pixels must lie in [0, 1] (min={f.min():.6f}, max={f.max():.6f})",
            )
        if self.kind == SampleKind.IMAGE and f.shape[0] != 1:
            raise VerboseSamplesError(FailCode.FAIL_SHAPE_MISMATCH, "an image has exactly one frame")
        f.setflags(write=False)
        object.__setattr__(self, "frames", f)
        object.__setattr__(self, "kind", SampleKind(self.kind))

    @classmethod
    def image(cls, pixels: NDArray[np.float64]) -> "PixelSample":
        return cls(SampleKind.IMAGE, np.asarray(pixels, dtype=np.float64)[None])

    @classmethod
    def video(cls, frames: NDArray[np.float64]) -> "PixelSample":
        return cls(SampleKind.VIDEO, np.asarray(frames, dtype=np.float64))

    def with_frames(self, frames: NDArray[np.float64]) -> "PixelSample":
        return PixelSample(self.kind, frames)

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def spatial(self) -> tuple[int, int]:
        return int(self.frames.shape[1]), int(self.frames.shape[2])


@dataclass(frozen=True)
class DecodePolicy:
    kind: str = "greedy"          # greedy | nucleus
    top_p: float = 0.9

    def __post_init__(self) -> None:
        if self.kind not in ("greedy", "nucleus"):
            raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, f"unknown decode policy {self.kind}")
        if not 0.0 < self.top_p <= 1.0:
            raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, "top_p must lie in (0, 1]")

    @classmethod
    def greedy(cls) -> "DecodePolicy":
        return cls("greedy")

    @classmethod
    def nucleus(cls, top_p: float = 0.9) -> "DecodePolicy":
        return cls("nucleus", top_p)


@dataclass
class ForwardPass:
    """
    Teacher-forced outputs for N realized tokens, as torch tensors.

    logits/probs/log_probs: (N, V); hidden: (N, C'); attentions: (N, P_total);
    frame_features: (M, D) for videos, else None; activations: per-layer
    snapshots for the sponge objective.
    """

    tokens: torch.Tensor
    logits: torch.Tensor
    hidden: torch.Tensor
    attentions: torch.Tensor
    frame_features: torch.Tensor | None
    eos_id: int
    activations: list[torch.Tensor] = field(default_factory=list)

    @property
    def log_probs(self) -> torch.Tensor:
        return torch.log_softmax(self.logits, dim=-1)

    @property
    def probs(self) -> torch.Tensor:
        return torch.softmax(self.logits, dim=-1)

    @property
    def length(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def vocab_size(self) -> int:
        return int(self.logits.shape[-1])

    @classmethod
    def from_probs(
        cls,
        probs: Any,
        tokens: Any,
        eos_id: int,
        hidden: Any = None,
        frame_features: Any = None,
    ) -> "ForwardPass":
        """Build a pass from explicit distributions (logits = ln p, zeros clamped)."""
        p = torch.as_tensor(np.asarray(probs, dtype=np.float64))
        tiny = torch.finfo(torch.float64).tiny
        logits = torch.log(p.clamp_min(tiny))
        n = p.shape[0]
        h = torch.zeros(n, 1, dtype=torch.float64) if hidden is None else torch.as_tensor(
            np.asarray(hidden, dtype=np.float64))
        ff = None if frame_features is None else torch.as_tensor(np.asarray(frame_features, dtype=np.float64))
        return cls(
            tokens=torch.as_tensor(np.asarray(tokens, dtype=np.int64)),
            logits=logits,
            hidden=h,
            attentions=torch.zeros(n, 1, dtype=torch.float64),
            frame_features=ff,
            eos_id=eos_id,
        )


@dataclass
class GenerationTrace:
    """One autoregressive decode y₁..y_N with its per-step records."""

    tokens: list[int]
    distributions: NDArray[np.float64]        # (N, V)
    logits: NDArray[np.float64]               # (N, V)
    hidden_states: NDArray[np.float64]        # (N, C')
    attentions: NDArray[np.float64]           # (N, P_total)
    frame_features: NDArray[np.float64] | None
    prompt: list[int]
    eos_id: int
    max_length: int

    def __post_init__(self) -> None:
        n = len(self.tokens)
        if n > self.max_length:
            raise VerboseSamplesError(FailCode.FAIL_SHAPE_MISMATCH, "trace longer than max_length")
        for name in ("distributions", "logits", "hidden_states", "attentions"):
            if getattr(self, name).shape[0] != n:
                raise VerboseSamplesError(
                    FailCode.FAIL_SHAPE_MISMATCH, f"{name} has {getattr(self, name).shape[0]} rows for N={n}",
                )

    @property
    def length(self) -> int:
        return len(self.tokens)

    @property
    def stopped_on_eos(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == self.eos_id

    def as_forward(self) -> ForwardPass:
        ff = None if self.frame_features is None else torch.as_tensor(self.frame_features)
        return ForwardPass(
            tokens=torch.as_tensor(np.asarray(self.tokens, dtype=np.int64)),
            logits=torch.as_tensor(self.logits),
            hidden=torch.as_tensor(self.hidden_states),
            attentions=torch.as_tensor(self.attentions),
            frame_features=ff,
            eos_id=self.eos_id,
        )
