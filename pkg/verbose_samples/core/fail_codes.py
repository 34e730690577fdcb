"""
verbose-samples — Fail codes catalog

Structured definitions for every failure the library reports, with causes
and next steps, plus the single exception type that carries them.
"""

from __future__ import annotations

from enum import Enum, auto
from typing import Any


class FailCode(Enum):
    FAIL_NON_FINITE = auto()
    FAIL_SHAPE_MISMATCH = auto()
    FAIL_SVD_NONCONVERGENCE = auto()
    FAIL_INVALID_DISTRIBUTION = auto()
    FAIL_ZERO_PROBABILITY = auto()
    FAIL_INVALID_TOKEN = auto()
    FAIL_NON_DIFFERENTIABLE = auto()
    FAIL_TRAINING_DIVERGED = auto()
    FAIL_NON_FINITE_GRADIENT = auto()
    FAIL_CONSTRAINT_VIOLATION = auto()
    FAIL_DEGENERATE_VARIANCE = auto()
    FAIL_EMPTY_INPUT = auto()
    FAIL_CONFIG_INVALID = auto()
    FAIL_IO = auto()
    FAIL_CHECKPOINT_FORMAT = auto()


FAIL_DESCRIPTIONS: dict[FailCode, dict[str, str]] = {
    FailCode.FAIL_NON_FINITE: {
        "cause": "NaN or infinite value in a numeric input",
        "next": "Inspect the producer of the input; logits and pixels must be finite.",
    },
    FailCode.FAIL_SHAPE_MISMATCH: {
        "cause": "Array shapes disagree (frame size, frame count, sample vs original)",
        "next": "Check the victim config against the dataset (image_size, n_frames).",
    },
    FailCode.FAIL_SVD_NONCONVERGENCE: {
        "cause": "LAPACK SVD did not converge",
        "next": "Check the matrix for extreme magnitudes; rescale hidden states.",
    },
    FailCode.FAIL_INVALID_DISTRIBUTION: {
        "cause": "Probability vector is negative or does not sum to 1",
        "next": "Build distributions through softmax().",
    },
    FailCode.FAIL_ZERO_PROBABILITY: {
        "cause": "A realized token has probability 0 (log-probability -inf)",
        "next": "The trace was not produced by this model; re-decode it.",
    },
    FailCode.FAIL_INVALID_TOKEN: {
        "cause": "Token id outside the vocabulary, or unknown prompt word",
        "next": "Encode text with VocabSpec.encode() of the same victim.",
    },
    FailCode.FAIL_NON_DIFFERENTIABLE: {
        "cause": "Loss function returned a non-scalar or non-tensor value",
        "next": "Return a 0-dim torch tensor built from the forward pass.",
    },
    FailCode.FAIL_TRAINING_DIVERGED: {
        "cause": "Training loss became NaN",
        "next": "Lower the learning rate; the seed is in the error context.",
    },
    FailCode.FAIL_NON_FINITE_GRADIENT: {
        "cause": "Input gradient contains NaN/inf during PGD",
        "next": "Check the objective at the reported iteration.",
    },
    FailCode.FAIL_CONSTRAINT_VIOLATION: {
        "cause": "Perturbation exceeds epsilon or pixels leave [0, 1]",
        "next": "Re-run with projection enabled; do not edit attack outputs by hand.",
    },
    FailCode.FAIL_DEGENERATE_VARIANCE: {
        "cause": "Regression input has zero variance",
        "next": "Use at least two distinct forced lengths with non-constant cost.",
    },
    FailCode.FAIL_EMPTY_INPUT: {
        "cause": "Operation requires at least one record or caption",
        "next": "Provide a non-empty sample set.",
    },
    FailCode.FAIL_CONFIG_INVALID: {
        "cause": "Configuration value out of range, unknown key, or missing path",
        "next": "Compare the config document with the dataclass defaults.",
    },
    FailCode.FAIL_IO: {
        "cause": "File could not be read or written",
        "next": "Check that the output directory is writable and inputs exist.",
    },
    FailCode.FAIL_CHECKPOINT_FORMAT: {
        "cause": "Checkpoint magic, header or payload is malformed",
        "next": "Re-create the checkpoint with `verbose-samples train`.",
    },
}


def get_fail_description(code: str) -> dict[str, str]:
    """Look up a fail code by its string name."""
    try:
        fc = FailCode[code]
        return FAIL_DESCRIPTIONS.get(fc, {"cause": "unknown", "next": "diagnose"})
    except KeyError:
        return {"cause": code, "next": "diagnose"}


class VerboseSamplesError(Exception):
    """Error carrying a FailCode and a context dict for machine-readable reports."""

    def __init__(self, code: FailCode, message: str, **context: Any) -> None:
        super().__init__(f"{code.name}: {message}")
        self.code = code
        self.message = message
        self.context = context

    def as_record(self) -> dict[str, Any]:
        desc = FAIL_DESCRIPTIONS.get(self.code, {})
        return {
            "status": "error",
            "code": self.code.name,
            "message": self.message,
            "cause": desc.get("cause", ""),
            "next": desc.get("next", ""),
            "context": {k: _jsonable(v) for k, v in self.context.items()},
        }


def _jsonable(v: Any) -> Any:
    if isinstance(v, (str, int, float, bool)) or v is None:
        return v
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return str(v)
