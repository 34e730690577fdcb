"""
verbose-samples — Configuration documents

Victim, training, attack, dataset, meter and run configuration as
dataclasses with defaults, ``as_dict`` / ``from_dict`` and validation.
ε and α are stored on the [0, 1] pixel scale (8-bit units / 255).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, TypeVar

from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError

T = TypeVar("T")

MODALITIES = ("image", "video")
METHODS = ("original", "noise", "sponge", "nicg", "verbose")
DEFAULT_VIDEO_FRAMES = 8


def _invalid(msg: str, **ctx: Any) -> VerboseSamplesError:
    return VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, msg, **ctx)


def _build(cls: type[T], data: dict[str, Any], nested: dict[str, type] | None = None) -> T:
    """Instantiate *cls* from a dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise _invalid(f"{cls.__name__} expects an object, got {type(data).__name__}")
    names = {f.name for f in fields(cls)}  # type: ignore[arg-type]
    unknown = sorted(set(data) - names)
    if unknown:
        raise _invalid(f"unknown keys for {cls.__name__}: {unknown}", keys=unknown)
    kwargs: dict[str, Any] = {}
    for k, v in data.items():
        sub = (nested or {}).get(k)
        if sub is not None and isinstance(v, dict):
            v = sub.from_dict(v)  # type: ignore[attr-defined]
        elif isinstance(v, list) and k in _TUPLE_FIELDS:
            v = tuple(v)
        kwargs[k] = v
    return cls(**kwargs)


_TUPLE_FIELDS = {"a", "b", "losses", "forced_lengths", "epsilons", "command"}


# ---------------------------------------------------------------------------
# Victim architecture
# ---------------------------------------------------------------------------
@dataclass
class VictimConfig:
    """Toy captioner architecture. C = D = d_model."""

    kind: str = "image"
    image_size: int = 32
    patch_size: int = 8
    n_frames: int = 1
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    mlp_ratio: int = 2
    vocab_size: int = 64
    max_positions: int = 640
    hidden_layers: str = "final"      # final | all

    def __post_init__(self) -> None:
        if self.kind not in MODALITIES:
            raise _invalid(f"kind must be one of {MODALITIES}", kind=self.kind)
        if self.kind == "image" and self.n_frames != 1:
            raise _invalid("image victims have exactly one frame", n_frames=self.n_frames)
        if self.n_frames < 1:
            raise _invalid("n_frames must be >= 1")
        if self.image_size % self.patch_size:
            raise _invalid("image_size must be a multiple of patch_size")
        if self.d_model % self.n_heads:
            raise _invalid("d_model must be a multiple of n_heads")
        if self.hidden_layers not in ("final", "all"):
            raise _invalid("hidden_layers must be 'final' or 'all'")
        if self.vocab_size < 4:
            raise _invalid("vocab_size must leave room for specials and words")

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @classmethod
    def for_modality(cls, kind: str) -> "VictimConfig":
        return cls(kind=kind, n_frames=DEFAULT_VIDEO_FRAMES if kind == "video" else 1)

    @classmethod
    def reduced(cls, kind: str = "image", n_frames: int = 3) -> "VictimConfig":
        """8×8 input, V=16, C=16 — the gradient-oracle victim."""
        return cls(
            kind=kind, image_size=8, patch_size=4,
            n_frames=n_frames if kind == "video" else 1,
            d_model=16, n_heads=2, n_layers=2, vocab_size=16, max_positions=64,
        )

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "VictimConfig":
        return _build(cls, data)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 2e-3
    prompt_mix: float = 0.25
    n_train: int = 3000
    n_heldout: int = 200
    grad_clip: float = 1.0

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise _invalid("epochs >= 0, batch_size >= 1, lr > 0 required")
        if not 0.0 <= self.prompt_mix <= 1.0:
            raise _invalid("prompt_mix must lie in [0, 1]")

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        return _build(cls, data)


# ---------------------------------------------------------------------------
# Attack
# ---------------------------------------------------------------------------
@dataclass
class WeightSchedule:
    """𝒯_k(t) = a_k ln t + b_k, clamped below at tau_min; a_k = b_k = 0 means 𝒯_k ≡ 1."""

    a: tuple[float, float, float] = (10.0, 0.0, 0.5)
    b: tuple[float, float, float] = (-20.0, 0.0, 1.0)
    tau_min: float = 1e-3
    use_decay: bool = True

    def __post_init__(self) -> None:
        self.a = tuple(float(x) for x in self.a)  # type: ignore[assignment]
        self.b = tuple(float(x) for x in self.b)  # type: ignore[assignment]
        if len(self.a) != 3 or len(self.b) != 3:
            raise _invalid("schedule needs exactly three (a_k, b_k) pairs")
        if self.tau_min <= 0:
            raise _invalid("tau_min must be > 0")

    @classmethod
    def for_modality(cls, kind: str) -> "WeightSchedule":
        if kind == "video":
            return cls(a=(10000.0, 0.0, 5.0), b=(100000.0, 0.0, 500.0))
        return cls()

    def as_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["a"], d["b"] = list(self.a), list(self.b)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "WeightSchedule":
        return _build(cls, data)


@dataclass
class AttackConfig:
    epsilon: float = 8 / 255
    alpha: float = 1 / 255
    iterations: int = 1000
    max_length: int = 512
    decode_policy: str = "greedy"     # greedy | nucleus
    top_p: float = 0.9
    redecode_period: int = 1
    schedule: WeightSchedule = field(default_factory=WeightSchedule)
    momentum: float = 0.9
    use_momentum: bool = True
    losses: tuple[int, ...] = (1, 2, 3)
    diversity: str = "auto"           # auto | token | frame
    normalize_diversity: bool = False

    def __post_init__(self) -> None:
        self.losses = tuple(sorted(int(k) for k in self.losses))
        if not (self.epsilon > 0 and 0 < self.alpha <= self.epsilon):
            raise _invalid("require epsilon > 0 and 0 < alpha <= epsilon",
                           epsilon=self.epsilon, alpha=self.alpha)
        if self.iterations < 0:
            raise _invalid("iterations must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise _invalid("momentum must lie in [0, 1)", momentum=self.momentum)
        if self.decode_policy not in ("greedy", "nucleus"):
            raise _invalid("decode_policy must be greedy or nucleus")
        if not 0.0 < self.top_p <= 1.0:
            raise _invalid("top_p must lie in (0, 1]")
        if self.redecode_period < 1:
            raise _invalid("redecode_period must be >= 1")
        if self.max_length < 1:
            raise _invalid("max_length must be >= 1")
        if not set(self.losses) <= {1, 2, 3}:
            raise _invalid("losses must be a subset of {1, 2, 3}", losses=list(self.losses))
        if self.diversity not in ("auto", "token", "frame"):
            raise _invalid("diversity must be auto, token or frame")

    @property
    def effective_momentum(self) -> float:
        return self.momentum if self.use_momentum else 0.0

    def diversity_for(self, kind: str) -> str:
        if self.diversity != "auto":
            return self.diversity
        return "frame" if kind == "video" else "token"

    @classmethod
    def for_modality(cls, kind: str, **overrides: Any) -> "AttackConfig":
        return cls(schedule=WeightSchedule.for_modality(kind), **overrides)

    def as_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["schedule"] = self.schedule.as_dict()
        d["losses"] = list(self.losses)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AttackConfig":
        return _build(cls, data, nested={"schedule": WeightSchedule})


# ---------------------------------------------------------------------------
# Dataset, meter, run
# ---------------------------------------------------------------------------
@dataclass
class DatasetSpec:
    n_samples: int = 100
    kind: str = "image"
    seed: int = 0
    image_size: int = 32
    n_frames: int = DEFAULT_VIDEO_FRAMES

    def __post_init__(self) -> None:
        if self.n_samples < 0:
            raise _invalid("n_samples must be >= 0")
        if self.kind not in MODALITIES:
            raise _invalid(f"kind must be one of {MODALITIES}")

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DatasetSpec":
        return _build(cls, data)


@dataclass
class MeterSpec:
    kind: str = "power_proxy"     # power_proxy | external_command | null
    watts: float = 50.0
    command: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("power_proxy", "external_command", "null"):
            raise _invalid("meter kind must be power_proxy, external_command or null")
        if self.kind == "power_proxy" and not (self.watts >= 0 and math.isfinite(self.watts)):
            raise _invalid("watts must be finite and >= 0")
        if self.kind == "external_command" and not self.command:
            raise _invalid("external_command meter needs a command")

    def as_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["command"] = list(self.command)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MeterSpec":
        return _build(cls, data)


@dataclass
class RunConfig:
    """Resolved parameters of one CLI command."""

    seed: int = 0
    out: str = "runs/default"
    modality: str = "image"
    method: str = "verbose"
    prompt: str = ""
    workers: int = 1
    trials: int = 3
    eval_policy: str = "nucleus"
    progress: bool = False
    data: list[str] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)
    records: str | None = None
    forced_lengths: tuple[int, ...] = (8, 16, 32, 64, 128, 256)
    epsilons: tuple[float, ...] = (2 / 255, 4 / 255, 8 / 255, 16 / 255, 32 / 255)
    victim: VictimConfig = field(default_factory=VictimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    meter: MeterSpec = field(default_factory=MeterSpec)

    def __post_init__(self) -> None:
        if self.modality not in MODALITIES:
            raise _invalid(f"modality must be one of {MODALITIES}")
        if self.method not in METHODS:
            raise _invalid(f"method must be one of {METHODS}", method=self.method)
        if self.workers < 1 or self.trials < 1:
            raise _invalid("workers and trials must be >= 1")
        if self.eval_policy not in ("greedy", "nucleus"):
            raise _invalid("eval_policy must be greedy or nucleus")
        if not isinstance(self.seed, int):
            raise _invalid("seed must be an explicit integer")

    def validate_paths(self, *names: str) -> None:
        """All referenced input paths must exist."""
        for name in names:
            value = getattr(self, name)
            paths = value if isinstance(value, list) else [value]
            for p in paths:
                if p is None or not Path(p).exists():
                    raise _invalid(f"{name}: path does not exist: {p}", path=str(p))

    def as_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "out": self.out,
            "modality": self.modality,
            "method": self.method,
            "prompt": self.prompt,
            "workers": self.workers,
            "trials": self.trials,
            "eval_policy": self.eval_policy,
            "progress": self.progress,
            "data": list(self.data),
            "checkpoints": list(self.checkpoints),
            "records": self.records,
            "forced_lengths": list(self.forced_lengths),
            "epsilons": list(self.epsilons),
            "victim": self.victim.as_dict(),
            "train": self.train.as_dict(),
            "attack": self.attack.as_dict(),
            "dataset": self.dataset.as_dict(),
            "meter": self.meter.as_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        return _build(cls, data, nested={
            "victim": VictimConfig, "train": TrainConfig, "attack": AttackConfig,
            "dataset": DatasetSpec, "meter": MeterSpec,
        })

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise VerboseSamplesError(FailCode.FAIL_IO, f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise _invalid(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)
