"""
verbose-samples — Attack iteration history

Per-iteration records of one attack run: losses, raw and smoothed
weights, raw decay values, decode length and constraint slack. The length
is that of the latest decode, taken after the step on every
redecode_period-th iteration; `decoded_at` names that iteration (0 is the
clean input).
Serializes to JSONL, one record per iteration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterator


@dataclass
class IterationRecord:
    t: int
    losses: tuple[float, float, float]
    raw_weights: tuple[float, float, float]
    weights: tuple[float, float, float]
    decay_raw: tuple[float, float, float]
    length: int
    slack: float                       # ε − max_j ‖X′_j − X_j‖_∞ after the step
    objective: float = 0.0
    decoded_at: int = 0

    def as_dict(self) -> dict[str, Any]:
        return {
            "t": self.t,
            "losses": list(self.losses),
            "raw_weights": list(self.raw_weights),
            "weights": list(self.weights),
            "decay_raw": list(self.decay_raw),
            "length": self.length,
            "slack": self.slack,
            "objective": self.objective,
            "decoded_at": self.decoded_at,
        }


@dataclass
class IterationHistory:
    """Ordered iteration records of a single attack run."""

    records: list[IterationRecord] = field(default_factory=list)
    initial_length: int | None = None     # decode length of the clean input

    def append(self, record: IterationRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[IterationRecord]:
        return iter(self.records)

    @property
    def lengths(self) -> list[int]:
        return [r.length for r in self.records]

    @property
    def min_slack(self) -> float | None:
        if not self.records:
            return None
        return min(r.slack for r in self.records)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.as_dict(), sort_keys=True) + "\n" for r in self.records)
