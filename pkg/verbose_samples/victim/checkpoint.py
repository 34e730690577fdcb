"""
verbose-samples — Self-describing victim checkpoints

Layout:
    b"VSCKPT1\\n"
    8-byte little-endian header length
    JSON header (config, seed, vocab, meta, tensor index), sorted keys
    raw little-endian float64 payload, tensors in header order

The same parameters always serialize to the same bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np
import torch

from verbose_samples.core.config import VictimConfig
from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError
from verbose_samples.victim.model import ToyCaptioner, build_victim, freeze
from verbose_samples.victim.vocab import VocabSpec

MAGIC = b"VSCKPT1\n"


def _header(model: ToyCaptioner, meta: dict[str, Any]) -> tuple[dict[str, Any], list[np.ndarray]]:
    index, arrays = [], []
    offset = 0
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f8", copy=False)
        index.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += int(arr.size)
        arrays.append(arr)
    vocab = model.vocab
    header = {
        "config": model.config.as_dict(),
        "seed": model.seed,
        "vocab": {"tokens": list(vocab.tokens), "pad_id": vocab.pad_id,
                  "bos_id": vocab.bos_id, "eos_id": vocab.eos_id},
        "meta": meta,
        "tensors": index,
    }
    return header, arrays


def save_checkpoint(model: ToyCaptioner, path: str | Path, meta: dict[str, Any] | None = None) -> Path:
    header, arrays = _header(model, meta or {})
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    out = Path(path)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            for arr in arrays:
                fh.write(np.ascontiguousarray(arr).tobytes())
    except OSError as exc:
        raise VerboseSamplesError(FailCode.FAIL_IO, f"cannot write checkpoint {out}: {exc}") from exc
    return out


def read_header(path: str | Path) -> tuple[dict[str, Any], bytes]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise VerboseSamplesError(FailCode.FAIL_IO, f"cannot read checkpoint {path}: {exc}") from exc
    if not raw.startswith(MAGIC) or len(raw) < len(MAGIC) + 8:
        raise VerboseSamplesError(FailCode.FAIL_CHECKPOINT_FORMAT, f"{path} is not a victim checkpoint")
    (n,) = struct.unpack("<Q", raw[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    try:
        header = json.loads(raw[start:start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise VerboseSamplesError(FailCode.FAIL_CHECKPOINT_FORMAT, f"corrupt checkpoint header: {exc}") from exc
    return header, raw[start + n:]


def load_checkpoint(path: str | Path) -> ToyCaptioner:
    """Rebuild the frozen victim stored at *path*."""
    header, payload = read_header(path)
    try:
        data = np.frombuffer(payload, dtype="<f8")
    except ValueError as exc:
        raise VerboseSamplesError(FailCode.FAIL_CHECKPOINT_FORMAT, f"truncated checkpoint payload: {exc}") from exc
    expected = sum(t["count"] for t in header["tensors"])
    if data.size != expected:
        raise VerboseSamplesError(
            FailCode.FAIL_CHECKPOINT_FORMAT, f"payload has {data.size} values, header lists {expected}",
        )
    v = header["vocab"]
    vocab = VocabSpec(tuple(v["tokens"]), v["pad_id"], v["bos_id"], v["eos_id"])
    model = build_victim(VictimConfig.from_dict(header["config"]), int(header["seed"]), vocab)
    state = {
        t["name"]: torch.from_numpy(
            data[t["offset"]:t["offset"] + t["count"]].reshape(t["shape"]).astype(np.float64)
        )
        for t in header["tensors"]
    }
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise VerboseSamplesError(FailCode.FAIL_CHECKPOINT_FORMAT, f"tensor mismatch: {exc}") from exc
    return freeze(model)
