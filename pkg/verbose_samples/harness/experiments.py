"""
verbose-samples — Experiments

Crafting (any method over a dataset), per-sample evaluation records,
summary tables, and the experiment grids: loss/optimizer ablation,
transfer, ε sweep, video diversity variants and caption-vs-QA tasks.

Samples fan out over a thread pool. Every sample's randomness comes from
SeedSequence([run_seed, crc32(sample_id)]), so results do not depend on
the worker count or scheduling order.
"""

from __future__ import annotations

import itertools
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping, Sequence, TypeVar

import numpy as np
from tqdm import tqdm

from verbose_samples.attack.pgd import AttackResult, run_method
from verbose_samples.core.config import AttackConfig
from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError
from verbose_samples.harness.interpret import (
    attention_dispersion, chair_metrics, is_hallucinated, parse_mentions, perceptibility, saliency_map,
    saliency_summary,
)
from verbose_samples.harness.measure import EnergyMeter, PowerProxyMeter, measure_generation
from verbose_samples.harness.reports import Table
from verbose_samples.victim.model import ToyCaptioner
from verbose_samples.victim.samples import DecodePolicy, PixelSample
from verbose_samples.victim.shape_world import ShapeWorld, ShapeWorldItem
from verbose_samples.victim.vocab import QUESTION_TEMPLATES

log = logging.getLogger(__name__)

A = TypeVar("A")
B = TypeVar("B")


# ---------------------------------------------------------------------------
# Seeds and fan-out
# ---------------------------------------------------------------------------
def sample_seed(run_seed: int, sample_id: str) -> int:
    """Stable per-sample seed; independent of worker assignment."""
    ss = np.random.SeedSequence([run_seed, zlib.crc32(sample_id.encode("utf-8"))])
    return int(ss.generate_state(1)[0])


def sample_rng(run_seed: int, sample_id: str) -> np.random.Generator:
    return np.random.default_rng(sample_seed(run_seed, sample_id))


def parallel_map(
    fn: Callable[[A], B],
    items: Sequence[A],
    workers: int = 1,
    desc: str = "",
    progress: bool = False,
) -> list[B]:
    """Order-preserving map over a bounded thread pool."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in tqdm(items, desc=desc, disable=not progress)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(tqdm(pool.map(fn, items), total=len(items), desc=desc, disable=not progress))


def encode_prompt(victim: ToyCaptioner, text: str) -> list[int]:
    return victim.vocab.encode(text) if text else []


@dataclass
class EvalSettings:
    policy: DecodePolicy = field(default_factory=DecodePolicy.greedy)
    trials: int = 3
    meter: EnergyMeter = field(default_factory=PowerProxyMeter)
    max_length: int = 512
    workers: int = 1
    progress: bool = False
    saliency: bool = True


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------
@dataclass
class SampleRecord:
    sample_id: str
    method: str
    length: float
    lengths: list[int]
    latency: float
    energy: float | None
    caption: str
    metrics: dict[str, Any] = field(default_factory=dict)
    source_id: str | None = None

    def as_dict(self) -> dict[str, Any]:
        """Deterministic part (no wall-clock values)."""
        return {
            "id": self.sample_id,
            "method": self.method,
            "source_id": self.source_id,
            "length": self.length,
            "lengths": list(self.lengths),
            "caption": self.caption,
            "metrics": self.metrics,
        }

    def timing(self) -> dict[str, Any]:
        return {"id": self.sample_id, "method": self.method,
                "latency": self.latency, "energy": self.energy}


@dataclass
class Crafted:
    """A sample to evaluate: the clean item plus the (possibly perturbed) pixels."""

    item: ShapeWorldItem
    sample: PixelSample
    method: str
    result: AttackResult | None = None

    @property
    def sample_id(self) -> str:
        return self.item.sample_id if self.method == "original" else f"{self.item.sample_id}-{self.method}"


def craft_samples(
    victim: ToyCaptioner,
    dataset: ShapeWorld | Sequence[ShapeWorldItem],
    method: str,
    config: AttackConfig,
    prompt: str = "",
    seed: int = 0,
    workers: int = 1,
    trainable_frames: Sequence[int] | None = None,
    progress: bool = False,
) -> list[Crafted]:
    prompt_ids = encode_prompt(victim, prompt)

    def one(item: ShapeWorldItem) -> Crafted:
        res = run_method(
            method, victim, item.sample, prompt_ids, config,
            rng=sample_rng(seed, item.sample_id), trainable_frames=trainable_frames,
        )
        return Crafted(item, res.sample, method, res)

    return parallel_map(one, list(dataset), workers, desc=f"craft:{method}", progress=progress)


def evaluate_one(
    victim: ToyCaptioner,
    crafted: Crafted,
    prompt: Sequence[int],
    settings: EvalSettings,
    seed: int,
) -> SampleRecord:
    """Measure one sample; the trial seeds follow the clean sample id."""
    item = crafted.item
    m = measure_generation(
        victim, crafted.sample, prompt, settings.policy, settings.trials, settings.meter,
        seed=sample_seed(seed, item.sample_id), max_length=settings.max_length,
    )
    first = m.traces[0]
    caption = victim.vocab.decode(first.tokens)
    mentions = parse_mentions(caption)
    hallucinated = sum(is_hallucinated(x, item.objects) for x in mentions)
    linf, rmse = perceptibility(item.sample, crafted.sample)
    metrics = {
        "mentions": len(mentions),
        "hallucinated": hallucinated,
        "attention_entropy": attention_dispersion(first),
        "linf": linf,
        "rmse": rmse,
        "stopped_on_eos": first.stopped_on_eos,
    }
    if settings.saliency:
        sal = saliency_summary(saliency_map(victim, crafted.sample, first))
        metrics["saliency_mass"] = sal.mass
        metrics["saliency_entropy"] = sal.entropy
        metrics["saliency_frame_share"] = sal.frame_share
    return SampleRecord(
        sample_id=crafted.sample_id, method=crafted.method, length=m.length, lengths=m.lengths,
        latency=m.latency, energy=m.energy, caption=caption, metrics=metrics,
        source_id=item.sample_id,
    )


def evaluate_samples(
    victim: ToyCaptioner,
    crafted: Sequence[Crafted],
    prompt: str = "",
    settings: EvalSettings | None = None,
    seed: int = 0,
) -> list[SampleRecord]:
    settings = settings or EvalSettings()
    prompt_ids = encode_prompt(victim, prompt)
    return parallel_map(
        lambda c: evaluate_one(victim, c, prompt_ids, settings, seed),
        list(crafted), settings.workers, desc="evaluate", progress=settings.progress,
    )


def _mean(values: Iterable[float | None]) -> float | None:
    vals = list(values)
    if not vals or any(v is None for v in vals):
        return None
    return float(np.mean(vals))


def summarize(records: Sequence[SampleRecord], items: Mapping[str, ShapeWorldItem] | None = None) -> Table:
    """One row per method: means, median, CHAIR, attention and saliency entropy, perceptibility."""
    table = Table("summary", [
        "method", "n", "mean_length", "median_length", "chair_i", "chair_s",
        "attention_entropy", "saliency_entropy", "linf_max", "rmse_mean", "mean_latency", "mean_energy",
    ])
    methods = sorted({r.method for r in records}, key=lambda m: (m != "original", m))
    for method in methods:
        rs = [r for r in records if r.method == method]
        row: dict[str, Any] = {
            "method": method,
            "n": len(rs),
            "mean_length": float(np.mean([r.length for r in rs])),
            "median_length": float(np.median([r.length for r in rs])),
            "attention_entropy": float(np.mean([r.metrics["attention_entropy"] for r in rs])),
            "saliency_entropy": _mean(r.metrics.get("saliency_entropy") for r in rs),
            "linf_max": float(np.max([r.metrics["linf"] for r in rs])),
            "rmse_mean": float(np.mean([r.metrics["rmse"] for r in rs])),
            "mean_latency": _mean(r.latency for r in rs),
            "mean_energy": _mean(r.energy for r in rs),
        }
        if items is not None:
            truth = [items[r.source_id].objects for r in rs]
            chair = chair_metrics([r.caption for r in rs], truth)
            row["chair_i"], row["chair_s"] = chair.chair_i, chair.chair_s
        else:
            mentions = sum(r.metrics["mentions"] for r in rs)
            row["chair_i"] = sum(r.metrics["hallucinated"] for r in rs) / mentions if mentions else 0.0
            row["chair_s"] = sum(r.metrics["hallucinated"] > 0 for r in rs) / len(rs)
        table.rows.append(row)
    return table


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------
def _measure_cell(
    victim: ToyCaptioner,
    dataset: ShapeWorld,
    method: str,
    config: AttackConfig,
    prompt: str,
    seed: int,
    settings: EvalSettings,
    trainable_frames: Sequence[int] | None = None,
) -> tuple[list[Crafted], list[SampleRecord]]:
    crafted = craft_samples(victim, dataset, method, config, prompt, seed, settings.workers,
                            trainable_frames, settings.progress)
    return crafted, evaluate_samples(victim, crafted, prompt, settings, seed)


def _cell_means(records: Sequence[SampleRecord]) -> dict[str, Any]:
    if not records:
        return {"mean_length": None, "mean_latency": None, "mean_energy": None}
    return {
        "mean_length": float(np.mean([r.length for r in records])),
        "mean_latency": _mean(r.latency for r in records),
        "mean_energy": _mean(r.energy for r in records),
    }


LOSS_SUBSETS: list[tuple[int, ...]] = [
    s for k in (1, 2, 3) for s in itertools.combinations((1, 2, 3), k)
]
OPTIMIZER_CELLS: list[tuple[bool, bool]] = [(True, True), (True, False), (False, True), (False, False)]


def ablation_suite(
    victim: ToyCaptioner,
    dataset: ShapeWorld,
    config: AttackConfig,
    prompt: str = "",
    seed: int = 0,
    settings: EvalSettings | None = None,
) -> Table:
    """Clean baseline row, 7 loss-subset cells, 4 decay × momentum cells."""
    settings = settings or EvalSettings(trials=1)
    table = Table("ablation", [
        "group", "cell", "losses", "use_decay", "use_momentum", "mean_length",
        "mean_latency", "mean_energy",
    ])
    cache: dict[str, dict[str, Any]] = {}

    def run(cfg: AttackConfig) -> dict[str, Any]:
        key = repr(sorted(cfg.as_dict().items()))
        if key not in cache:
            _, records = _measure_cell(victim, dataset, "verbose", cfg, prompt, seed, settings)
            cache[key] = _cell_means(records)
        return cache[key]

    _, clean = _measure_cell(victim, dataset, "original", config, prompt, seed, settings)
    table.add(group="baseline", cell="clean", losses=[], use_decay=None, use_momentum=None,
              **_cell_means(clean))
    for subset in LOSS_SUBSETS:
        cfg = replace(config, losses=subset)
        table.add(group="loss", cell="+".join(f"L{k}" for k in subset), losses=list(subset),
                  use_decay=cfg.schedule.use_decay, use_momentum=cfg.use_momentum, **run(cfg))
    for decay, momentum in OPTIMIZER_CELLS:
        cfg = replace(config, losses=(1, 2, 3), use_momentum=momentum,
                      schedule=replace(config.schedule, use_decay=decay))
        cell = f"decay={'on' if decay else 'off'},momentum={'on' if momentum else 'off'}"
        table.add(group="optimizer", cell=cell, losses=[1, 2, 3], use_decay=decay,
                  use_momentum=momentum, **run(cfg))
    table.meta = {"n_samples": len(dataset), "iterations": config.iterations}
    return table


def _check_compatible(victims: Mapping[str, ToyCaptioner]) -> None:
    shapes = {(v.config.kind, v.config.image_size, v.config.n_frames) for v in victims.values()}
    if len(shapes) > 1:
        raise VerboseSamplesError(
            FailCode.FAIL_SHAPE_MISMATCH, f"victims disagree on input shape: {sorted(shapes)}",
        )


def transfer_eval(
    victims: Mapping[str, ToyCaptioner],
    dataset: ShapeWorld,
    config: AttackConfig,
    prompt: str = "",
    seed: int = 0,
    settings: EvalSettings | None = None,
) -> Table:
    """Rows (source, target): samples crafted on source, measured on target; source=None is clean."""
    if not victims:
        raise VerboseSamplesError(FailCode.FAIL_EMPTY_INPUT, "transfer_eval needs at least one victim")
    _check_compatible(victims)
    settings = settings or EvalSettings(trials=1)
    table = Table("transfer", ["source", "target", "white_box", "mean_length", "mean_latency", "mean_energy"])
    clean = [Crafted(it, it.sample, "original") for it in dataset]
    for tname, target in victims.items():
        records = evaluate_samples(target, clean, prompt, settings, seed)
        table.add(source=None, target=tname, white_box=False, **_cell_means(records))
    for sname, source in victims.items():
        crafted = craft_samples(source, dataset, "verbose", config, prompt, seed,
                                settings.workers, progress=settings.progress)
        for tname, target in victims.items():
            records = evaluate_samples(target, crafted, prompt, settings, seed)
            table.add(source=sname, target=tname, white_box=sname == tname, **_cell_means(records))
    return table


def epsilon_sweep(
    victim: ToyCaptioner,
    dataset: ShapeWorld,
    config: AttackConfig,
    epsilons: Sequence[float],
    prompt: str = "",
    seed: int = 0,
    settings: EvalSettings | None = None,
) -> Table:
    """Length and perceptibility per ε; α is capped at ε."""
    settings = settings or EvalSettings(trials=1)
    table = Table("epsilon_sweep", [
        "epsilon", "epsilon_255", "mean_length", "linf_max", "rmse_mean", "mean_latency", "mean_energy",
    ])
    for eps in epsilons:
        cfg = replace(config, epsilon=float(eps), alpha=min(config.alpha, float(eps)))
        _, records = _measure_cell(victim, dataset, "verbose", cfg, prompt, seed, settings)
        table.add(
            epsilon=float(eps), epsilon_255=round(float(eps) * 255, 6),
            linf_max=float(np.max([r.metrics["linf"] for r in records])) if records else None,
            rmse_mean=float(np.mean([r.metrics["rmse"] for r in records])) if records else None,
            **_cell_means(records),
        )
    return table


VARIANTS = ("clean", "frame", "token", "single_frame", "framewise")


def diversity_variants(
    victim: ToyCaptioner,
    dataset: ShapeWorld,
    config: AttackConfig,
    prompt: str = "",
    seed: int = 0,
    settings: EvalSettings | None = None,
) -> Table:
    """
    Video attack variants: frame diversity (full), token diversity, a
    single randomly chosen trainable frame, and framewise (each frame
    attacked alone with the others clean, then stacked).
    """
    if victim.config.kind != "video":
        raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, "diversity variants need a video victim")
    settings = settings or EvalSettings(trials=1)
    prompt_ids = encode_prompt(victim, prompt)
    n_frames = victim.config.n_frames
    table = Table("variants", ["variant", "mean_length", "linf_max", "rmse_mean", "mean_latency", "mean_energy"])

    def single(item: ShapeWorldItem) -> Crafted:
        rng = sample_rng(seed, item.sample_id)
        j = int(rng.integers(n_frames))
        res = run_method("verbose", victim, item.sample, prompt_ids, replace(config, diversity="frame"),
                         rng=rng, trainable_frames=[j])
        return Crafted(item, res.sample, "verbose", res)

    def framewise(item: ShapeWorldItem) -> Crafted:
        frames = np.array(item.sample.frames)
        for j in range(n_frames):
            res = run_method("verbose", victim, item.sample, prompt_ids, replace(config, diversity="frame"),
                             rng=sample_rng(seed, f"{item.sample_id}/{j}"), trainable_frames=[j])
            frames[j] = res.sample.frames[j]
        return Crafted(item, item.sample.with_frames(frames), "verbose")

    for variant in VARIANTS:
        if variant == "clean":
            crafted = [Crafted(it, it.sample, "original") for it in dataset]
        elif variant in ("frame", "token"):
            crafted = craft_samples(victim, dataset, "verbose", replace(config, diversity=variant),
                                    prompt, seed, settings.workers, progress=settings.progress)
        else:
            fn = single if variant == "single_frame" else framewise
            crafted = parallel_map(fn, list(dataset), settings.workers, desc=variant, progress=settings.progress)
        records = evaluate_samples(victim, crafted, prompt, settings, seed)
        table.add(
            variant=variant,
            linf_max=float(np.max([r.metrics["linf"] for r in records])) if records else None,
            rmse_mean=float(np.mean([r.metrics["rmse"] for r in records])) if records else None,
            **_cell_means(records),
        )
    return table


def task_comparison(
    victim: ToyCaptioner,
    dataset: ShapeWorld,
    config: AttackConfig,
    question: str | None = None,
    seed: int = 0,
    settings: EvalSettings | None = None,
) -> Table:
    """Captioning (empty prompt) vs QA (question prompt), original and verbose."""
    settings = settings or EvalSettings(trials=1)
    question = question if question is not None else QUESTION_TEMPLATES[victim.config.kind][0]
    table = Table("tasks", ["task", "prompt", "method", "mean_length", "mean_latency", "mean_energy"])
    for task, prompt in (("caption", ""), ("qa", question)):
        for method in ("original", "verbose"):
            _, records = _measure_cell(victim, dataset, method, config, prompt, seed, settings)
            table.add(task=task, prompt=prompt, method=method, **_cell_means(records))
    return table
