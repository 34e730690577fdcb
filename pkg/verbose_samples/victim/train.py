"""
verbose-samples — Toy captioner training

Teacher-forced cross-entropy with Adam on shape-world. Prompt positions
and padding carry no loss. A fraction of samples (prompt_mix) is paired
with a question template so the same victim answers in QA mode.
"""

from __future__ import annotations

import logging
import math
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from verbose_samples.core.config import TrainConfig, VictimConfig
from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError
from verbose_samples.victim.model import ToyCaptioner, build_victim, freeze, generate
from verbose_samples.victim.samples import DecodePolicy
from verbose_samples.victim.shape_world import ShapeWorld
from verbose_samples.victim.vocab import QUESTION_TEMPLATES, VocabSpec

log = logging.getLogger(__name__)

IGNORE = -100


def question_prompts(vocab: VocabSpec, kind: str) -> list[list[int]]:
    """Encoded question templates; empty when the vocabulary lacks the words."""
    try:
        return [vocab.encode(q) for q in QUESTION_TEMPLATES[kind]]
    except VerboseSamplesError:
        return []


def make_batch(
    vocab: VocabSpec,
    captions: Sequence[list[int]],
    prompts: Sequence[list[int]],
) -> tuple[torch.Tensor, torch.Tensor]:
    """(inputs, labels), right-padded; labels hold IGNORE on prompt and pad slots."""
    rows_in, rows_lab = [], []
    for cap, prm in zip(captions, prompts):
        context = [vocab.bos_id, *prm]
        full = context + cap + [vocab.eos_id]
        labels = full[1:]
        labels[: len(context) - 1] = [IGNORE] * (len(context) - 1)
        rows_in.append(full[:-1])
        rows_lab.append(labels)
    width = max(len(r) for r in rows_in)
    inputs = torch.full((len(rows_in), width), vocab.pad_id, dtype=torch.int64)
    labels = torch.full((len(rows_in), width), IGNORE, dtype=torch.int64)
    for i, (r, lab) in enumerate(zip(rows_in, rows_lab)):
        inputs[i, : len(r)] = torch.tensor(r)
        labels[i, : len(lab)] = torch.tensor(lab)
    return inputs, labels


def train_toy(
    config: VictimConfig,
    dataset: ShapeWorld,
    train: TrainConfig | None = None,
    seed: int = 0,
    progress: bool = False,
) -> ToyCaptioner:
    """Train a victim; epochs=0 returns the initialised model. Deterministic in seed."""
    train = train or TrainConfig()
    model = build_victim(config, seed)
    if train.epochs == 0 or len(dataset) == 0:
        return freeze(model)
    if dataset.items[0].sample.kind.value != config.kind:
        raise VerboseSamplesError(FailCode.FAIL_SHAPE_MISMATCH, "dataset kind differs from victim kind")

    vocab = model.vocab
    captions = [vocab.encode(it.caption) for it in dataset]
    pixels = torch.as_tensor(np.stack([np.asarray(it.sample.frames) for it in dataset]))
    questions = question_prompts(vocab, config.kind)
    if train.prompt_mix > 0 and not questions:
        log.info("vocabulary lacks question words; training captions only")

    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    model.train()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        opt = torch.optim.Adam(model.parameters(), lr=train.lr)
        epochs = tqdm(range(train.epochs), desc="train", disable=not progress)
        for epoch in epochs:
            order = rng.permutation(len(dataset))
            total, batches = 0.0, 0
            for start in range(0, len(order), train.batch_size):
                idx = order[start:start + train.batch_size]
                prompts: list[list[int]] = []
                for _ in idx:
                    if questions and rng.random() < train.prompt_mix:
                        prompts.append(questions[int(rng.integers(len(questions)))])
                    else:
                        prompts.append([])
                inputs, labels = make_batch(vocab, [captions[i] for i in idx], prompts)
                out = model(pixels[torch.as_tensor(idx)], inputs)
                loss = F.cross_entropy(
                    out.logits.reshape(-1, out.logits.shape[-1]), labels.reshape(-1), ignore_index=IGNORE,
                )
                if not math.isfinite(float(loss)):
                    raise VerboseSamplesError(
                        FailCode.FAIL_TRAINING_DIVERGED,
                        f"training loss became {float(loss)} at epoch {epoch}",
                        seed=seed, epoch=epoch,
                    )
                opt.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), train.grad_clip)
                opt.step()
                total += float(loss)
                batches += 1
            log.info("epoch %d/%d loss=%.4f", epoch + 1, train.epochs, total / max(batches, 1))
    return freeze(model)


def token_accuracy(
    model: ToyCaptioner,
    dataset: ShapeWorld,
    prompt: Sequence[int] = (),
) -> float:
    """Position-wise match of greedy output against caption + EOS."""
    vocab = model.vocab
    hits, total = 0, 0
    for item in dataset:
        target = vocab.encode(item.caption) + [vocab.eos_id]
        trace = generate(model, item.sample, prompt, DecodePolicy.greedy(), max_length=len(target))
        hits += sum(int(a == b) for a, b in zip(trace.tokens, target))
        total += len(target)
    return hits / total if total else 0.0


def mean_greedy_length(
    model: ToyCaptioner,
    dataset: ShapeWorld,
    max_length: int = 512,
    prompt: Sequence[int] = (),
) -> float:
    if len(dataset) == 0:
        return 0.0
    lengths = [
        generate(model, it.sample, prompt, DecodePolicy.greedy(), max_length=max_length).length
        for it in dataset
    ]
    return float(np.mean(lengths))
