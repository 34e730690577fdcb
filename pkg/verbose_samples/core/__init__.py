"""Core data structures: numerical kernel, configuration, iteration history, fail codes."""

from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError, get_fail_description
from verbose_samples.core.config import (
    AttackConfig, DatasetSpec, MeterSpec, RunConfig, TrainConfig, VictimConfig, WeightSchedule,
)
from verbose_samples.core.state import IterationHistory, IterationRecord

__all__ = [
    "FailCode", "VerboseSamplesError", "get_fail_description",
    "AttackConfig", "DatasetSpec", "MeterSpec", "RunConfig", "TrainConfig",
    "VictimConfig", "WeightSchedule",
    "IterationHistory", "IterationRecord",
]
