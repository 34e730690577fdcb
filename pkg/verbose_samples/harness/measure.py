"""
verbose-samples — Length, latency and energy accounting

Energy meters:
  power_proxy       energy = watts × latency
  external_command  run a command before and after the decode, parse the
                    first number in its output as a joules counter, report
                    the difference
  null              no energy

Every timed decode runs under a process-wide lock so concurrent workers
never overlap inside a timing window.
"""

from __future__ import annotations

import logging
import re
import subprocess
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import numpy as np
from scipy import stats

from verbose_samples.core.config import MeterSpec
from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError
from verbose_samples.victim.model import ToyCaptioner, generate
from verbose_samples.victim.samples import DecodePolicy, GenerationTrace, PixelSample

log = logging.getLogger(__name__)

_TIMING_LOCK = threading.Lock()
_NUMBER = re.compile(r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")


# ---------------------------------------------------------------------------
# Energy meters
# ---------------------------------------------------------------------------
class EnergyMeter(Protocol):
    kind: str

    def begin(self) -> Any: ...

    def end(self, token: Any, latency: float) -> float | None: ...


@dataclass
class PowerProxyMeter:
    watts: float = 50.0
    kind: str = "power_proxy"

    def begin(self) -> Any:
        return None

    def end(self, token: Any, latency: float) -> float | None:
        return self.watts * latency


@dataclass
class NullMeter:
    kind: str = "null"

    def begin(self) -> Any:
        return None

    def end(self, token: Any, latency: float) -> float | None:
        return None


@dataclass
class ExternalCommandMeter:
    command: tuple[str, ...]
    timeout: float = 10.0
    kind: str = "external_command"

    def read(self) -> float:
        out = subprocess.run(
            list(self.command), capture_output=True, text=True, timeout=self.timeout, check=True,
        ).stdout
        m = _NUMBER.search(out)
        if m is None:
            raise ValueError(f"no number in meter output: {out[:80]!r}")
        return float(m.group(0))

    def begin(self) -> Any:
        try:
            return self.read()
        except (OSError, ValueError, subprocess.SubprocessError) as exc:
            log.warning("energy meter failed before decode: %s", exc)
            return None

    def end(self, token: Any, latency: float) -> float | None:
        if token is None:
            return None
        try:
            joules = self.read() - token
        except (OSError, ValueError, subprocess.SubprocessError) as exc:
            log.warning("energy meter failed after decode: %s", exc)
            return None
        if joules < 0:
            log.warning("energy meter went backwards (%.6g J); recording none", joules)
            return None
        return joules


def make_meter(spec: MeterSpec | None) -> EnergyMeter:
    spec = spec or MeterSpec()
    if spec.kind == "power_proxy":
        return PowerProxyMeter(spec.watts)
    if spec.kind == "external_command":
        return ExternalCommandMeter(tuple(spec.command))
    return NullMeter()


# ---------------------------------------------------------------------------
# Timed decoding
# ---------------------------------------------------------------------------
@dataclass
class TimedDecode:
    trace: GenerationTrace
    latency: float
    energy: float | None


def timed_generate(
    victim: ToyCaptioner,
    sample: PixelSample,
    prompt: Sequence[int],
    policy: DecodePolicy,
    max_length: int,
    rng: np.random.Generator | None,
    meter: EnergyMeter,
    suppress_eos: bool = False,
) -> TimedDecode:
    with _TIMING_LOCK:
        token = meter.begin()
        start = time.perf_counter()
        trace = generate(victim, sample, prompt, policy, max_length, rng=rng, suppress_eos=suppress_eos)
        latency = time.perf_counter() - start
        try:
            energy = meter.end(token, latency)
        except Exception as exc:  # noqa: BLE001 - a meter must never sink a run
            log.warning("energy meter %s failed: %s", meter.kind, exc)
            energy = None
    return TimedDecode(trace, latency, energy)


@dataclass
class Measurement:
    """Means over trials; energy is None if any trial lacked it."""

    length: float
    latency: float
    energy: float | None
    lengths: list[int] = field(default_factory=list)
    traces: list[GenerationTrace] = field(default_factory=list)

    def as_dict(self) -> dict[str, Any]:
        return {"length": self.length, "latency": self.latency, "energy": self.energy,
                "lengths": list(self.lengths)}


def measure_generation(
    victim: ToyCaptioner,
    sample: PixelSample,
    prompt: Sequence[int] = (),
    policy: DecodePolicy | None = None,
    trials: int = 3,
    meter: EnergyMeter | None = None,
    seed: int = 0,
    max_length: int = 512,
) -> Measurement:
    """Decode *trials* times, trial k seeded from (seed, k)."""
    if trials < 1:
        raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, "trials must be >= 1")
    policy = policy or DecodePolicy.greedy()
    meter = meter or PowerProxyMeter()
    runs = [
        timed_generate(victim, sample, prompt, policy, max_length,
                       np.random.default_rng([seed, k]), meter)
        for k in range(trials)
    ]
    energies = [r.energy for r in runs]
    return Measurement(
        length=float(np.mean([r.trace.length for r in runs])),
        latency=float(np.mean([r.latency for r in runs])),
        energy=None if any(e is None for e in energies) else float(np.mean(energies)),
        lengths=[r.trace.length for r in runs],
        traces=[r.trace for r in runs],
    )


# ---------------------------------------------------------------------------
# Cost vs length linearity
# ---------------------------------------------------------------------------
@dataclass
class LinearityFit:
    r: float
    slope: float
    intercept: float

    def as_dict(self) -> dict[str, float]:
        return {"r": self.r, "slope": self.slope, "intercept": self.intercept}


def fit_linearity(lengths: Sequence[float], costs: Sequence[float]) -> LinearityFit:
    x = np.asarray(lengths, dtype=np.float64)
    y = np.asarray(costs, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise VerboseSamplesError(FailCode.FAIL_EMPTY_INPUT, "need >= 2 paired points for a fit")
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise VerboseSamplesError(
            FailCode.FAIL_DEGENERATE_VARIANCE, "lengths or costs have zero variance",
        )
    fit = stats.linregress(x, y)
    return LinearityFit(float(fit.rvalue), float(fit.slope), float(fit.intercept))


@dataclass
class LinearityResult:
    latency: LinearityFit
    energy: LinearityFit | None
    points: list[dict[str, Any]]

    def as_dict(self) -> dict[str, Any]:
        return {
            "latency": self.latency.as_dict(),
            "energy": None if self.energy is None else self.energy.as_dict(),
            "points": self.points,
        }


def linearity_from_points(points: Sequence[dict[str, Any]]) -> LinearityResult:
    """Fit latency (and energy, when every point has it) against length."""
    lengths = [p["length"] for p in points]
    latency = fit_linearity(lengths, [p["latency"] for p in points])
    energy = None
    if points and all(p.get("energy") is not None for p in points):
        energy = fit_linearity(lengths, [p["energy"] for p in points])
    return LinearityResult(latency, energy, [dict(p) for p in points])


def linearity_check(
    victim: ToyCaptioner,
    forced_lengths: Sequence[int],
    sample: PixelSample | None = None,
    meter: EnergyMeter | None = None,
    repeats: int = 3,
    prompt: Sequence[int] = (),
) -> LinearityResult:
    """Latency/energy vs token count over EOS-suppressed decodes of fixed length."""
    if len(forced_lengths) < 4:
        raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, "linearity needs >= 4 forced lengths")
    cfg = victim.config
    if sample is None:
        sample = PixelSample(cfg.kind, np.full((cfg.n_frames, cfg.image_size, cfg.image_size, 3), 0.5))
    meter = meter or PowerProxyMeter()
    policy = DecodePolicy.greedy()
    # untimed warm-up
    generate(victim, sample, prompt, policy, max_length=min(forced_lengths), suppress_eos=True)
    points = []
    for n in forced_lengths:
        runs = [timed_generate(victim, sample, prompt, policy, n, None, meter, suppress_eos=True)
                for _ in range(repeats)]
        energies = [r.energy for r in runs]
        points.append({
            "forced_length": int(n),
            "length": runs[0].trace.length,
            "latency": float(np.median([r.latency for r in runs])),
            "energy": None if any(e is None for e in energies) else float(np.median(energies)),
        })
    return linearity_from_points(points)
