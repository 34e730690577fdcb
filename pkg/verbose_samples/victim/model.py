"""
verbose-samples — Toy multimodal captioner (the victim)

Patch embedding of each frame → visual tokens; a decoder of pre-LN blocks
with causal self-attention, cross-attention to the visual tokens and an
MLP. Videos cross-attend each frame separately and average the per-frame
outputs with a learned temporal position embedding; the per-frame feature
h_j = tanh(W · mean_patches(frame_j)) is added to that frame's memory.

All computation is float64. The module-level functions are the victim
interface used by the objectives, the attack and the harness.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from numpy.typing import NDArray
from torch import nn

from verbose_samples.core.config import VictimConfig
from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError
from verbose_samples.victim.samples import (
    DecodePolicy, ForwardPass, GenerationTrace, PixelSample, SampleKind,
)
from verbose_samples.victim.vocab import VocabSpec

log = logging.getLogger(__name__)

LossFn = Callable[[ForwardPass], "torch.Tensor | float"]


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------
def _causal_mask(t: int, s: int) -> torch.Tensor:
    """Query i (the last t of s positions) may see keys 0..s−t+i."""
    return torch.ones(t, s, dtype=torch.bool).tril(diagonal=s - t)


class Attention(nn.Module):
    def __init__(self, d_model: int, n_heads: int) -> None:
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        # (..., L, d) → (..., H, L, d_head)
        *lead, length, _ = x.shape
        return x.reshape(*lead, length, self.n_heads, self.d_head).transpose(-2, -3)

    def _merge(self, x: torch.Tensor) -> torch.Tensor:
        x = x.transpose(-2, -3)
        return x.reshape(*x.shape[:-2], self.n_heads * self.d_head)

    def keys_values(self, source: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self._split(self.k(source)), self._split(self.v(source))

    def attend(
        self,
        x: torch.Tensor,
        k: torch.Tensor,
        v: torch.Tensor,
        mask: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (output, head-averaged attention weights)."""
        q = self._split(self.q(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
        w = torch.softmax(scores, dim=-1)
        return self.o(self._merge(w @ v)), w.mean(dim=-3)


class DecoderBlock(nn.Module):
    def __init__(self, d_model: int, n_heads: int, mlp_ratio: int) -> None:
        super().__init__()
        self.ln_self = nn.LayerNorm(d_model)
        self.self_attn = Attention(d_model, n_heads)
        self.ln_cross = nn.LayerNorm(d_model)
        self.cross_attn = Attention(d_model, n_heads)
        self.ln_mlp = nn.LayerNorm(d_model)
        self.fc_in = nn.Linear(d_model, d_model * mlp_ratio)
        self.fc_out = nn.Linear(d_model * mlp_ratio, d_model)

    def forward(
        self,
        x: torch.Tensor,
        memory_kv: tuple[torch.Tensor, torch.Tensor],
        frame_weights: torch.Tensor,
        cache: dict[str, torch.Tensor] | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """
        x: (B, T, d); memory_kv: keys/values of shape (B, M, H, P, d_head);
        frame_weights: (M,), zero for masked frames, summing to 1.
        Returns (x, attention over M·P visual positions (B, T, M·P), MLP activation).
        """
        h = self.ln_self(x)
        k, v = self.self_attn.keys_values(h)
        if cache is not None:
            if "k" in cache:
                k = torch.cat([cache["k"], k], dim=-2)
                v = torch.cat([cache["v"], v], dim=-2)
            cache["k"], cache["v"] = k, v
        t, s = x.shape[1], k.shape[-2]
        sa, _ = self.self_attn.attend(h, k, v, mask=_causal_mask(t, s) if t > 1 else None)
        x = x + sa

        ca, w = self.cross_attn.attend(self.ln_cross(x).unsqueeze(1), *memory_kv)
        x = x + torch.einsum("bmtd,m->btd", ca, frame_weights)
        w = w * frame_weights[None, :, None, None]
        b, m, t, p = w.shape
        attn = w.permute(0, 2, 1, 3).reshape(b, t, m * p)

        act = F.gelu(self.fc_in(self.ln_mlp(x)))
        x = x + self.fc_out(act)
        return x, attn, act


# ---------------------------------------------------------------------------
# Captioner
# ---------------------------------------------------------------------------
@dataclass
class ModelOutput:
    logits: torch.Tensor                     # (B, T, V)
    hidden: torch.Tensor                     # (B, T, C')
    attentions: torch.Tensor                 # (B, T, M·P)
    frame_features: torch.Tensor | None      # (B, M, D)
    activations: list[torch.Tensor] = field(default_factory=list)


@dataclass
class StepOutput:
    logits: torch.Tensor                     # (V,)
    hidden: torch.Tensor                     # (C',)
    attention: torch.Tensor                  # (M·P,)


@dataclass
class DecodeState:
    memory_kv: list[tuple[torch.Tensor, torch.Tensor]]
    frame_weights: torch.Tensor
    frame_features: torch.Tensor | None
    caches: list[dict[str, torch.Tensor]]
    position: int


class ToyCaptioner(nn.Module):
    """Image or video captioner; one instance per (config, seed)."""

    def __init__(self, config: VictimConfig, vocab: VocabSpec, seed: int = 0) -> None:
        super().__init__()
        if vocab.size != config.vocab_size:
            raise VerboseSamplesError(
                FailCode.FAIL_CONFIG_INVALID, "vocabulary size disagrees with config",
                vocab=vocab.size, config=config.vocab_size,
            )
        self.config = config
        self.vocab = vocab
        self.seed = seed
        d = config.d_model
        ps = config.patch_size
        self.patch_embed = nn.Linear(ps * ps * 3, d)
        self.visual_pos = nn.Parameter(torch.randn(config.n_patches, d) * 0.02)
        self.ln_memory = nn.LayerNorm(d)
        if config.kind == "video":
            self.temporal_pos = nn.Parameter(torch.randn(config.n_frames, d) * 0.02)
            self.frame_proj = nn.Linear(d, d)
        self.token_embed = nn.Embedding(config.vocab_size, d)
        self.pos_embed = nn.Embedding(config.max_positions, d)
        nn.init.normal_(self.token_embed.weight, std=0.02)
        nn.init.normal_(self.pos_embed.weight, std=0.02)
        self.blocks = nn.ModuleList(
            DecoderBlock(d, config.n_heads, config.mlp_ratio) for _ in range(config.n_layers)
        )
        self.ln_final = nn.LayerNorm(d)
        self.head = nn.Linear(d, config.vocab_size)

    @property
    def is_video(self) -> bool:
        return self.config.kind == "video"

    @property
    def hidden_width(self) -> int:
        d = self.config.d_model
        return d * self.config.n_layers if self.config.hidden_layers == "all" else d

    # ----- visual side
    def patchify(self, pixels: torch.Tensor) -> torch.Tensor:
        """(B, M, H, W, 3) → (B, M, P, ps·ps·3)."""
        b, m, h, w, c = pixels.shape
        ps = self.config.patch_size
        x = pixels.reshape(b, m, h // ps, ps, w // ps, ps, c)
        x = x.permute(0, 1, 2, 4, 3, 5, 6)
        return x.reshape(b, m, (h // ps) * (w // ps), ps * ps * c)

    def encode_frames(self, pixels: torch.Tensor) -> torch.Tensor:
        """Linear patch features (B, M, P, d); a zero patch maps to the bias."""
        return self.patch_embed(self.patchify(pixels))

    def frame_features(self, feats: torch.Tensor) -> torch.Tensor:
        """h_j = tanh(W · mean_patches), (B, M, D); depends only on frame j."""
        return torch.tanh(self.frame_proj(feats.mean(dim=2)))

    def build_memory(self, pixels: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor | None]:
        feats = self.encode_frames(pixels)
        memory = feats + self.visual_pos
        h = None
        if self.is_video:
            h = self.frame_features(feats)
            memory = memory + self.temporal_pos[None, :, None, :] + h[:, :, None, :]
        return self.ln_memory(memory), h

    def _frame_weights(self, frame_mask: torch.Tensor | None, m: int) -> torch.Tensor:
        if frame_mask is None:
            return torch.full((m,), 1.0 / m, dtype=torch.float64)
        mask = torch.as_tensor(frame_mask, dtype=torch.bool)
        if mask.shape != (m,) or not bool(mask.any()):
            raise VerboseSamplesError(
                FailCode.FAIL_SHAPE_MISMATCH, "frame_mask needs one entry per frame and at least one True",
            )
        return mask.to(torch.float64) / mask.sum()

    # ----- teacher-forced pass
    def forward(
        self,
        pixels: torch.Tensor,
        tokens: torch.Tensor,
        frame_mask: torch.Tensor | None = None,
    ) -> ModelOutput:
        memory, h = self.build_memory(pixels)
        fw = self._frame_weights(frame_mask, memory.shape[1])
        t = tokens.shape[1]
        x = self.token_embed(tokens) + self.pos_embed(torch.arange(t))
        activations = [memory]
        outs, attn = [], None
        for block in self.blocks:
            x, attn, act = block(x, block.cross_attn.keys_values(memory), fw)
            outs.append(x)
            activations.extend([act, x])
        return ModelOutput(
            logits=self.head(self.ln_final(x)),
            hidden=self._hidden(outs),
            attentions=attn,
            frame_features=h,
            activations=activations,
        )

    def _hidden(self, outs: list[torch.Tensor]) -> torch.Tensor:
        final = self.ln_final(outs[-1])
        if self.config.hidden_layers == "all":
            return torch.cat([*outs[:-1], final], dim=-1)
        return final

    # ----- incremental decode (per-block key/value cache)
    def start_decode(
        self,
        pixels: torch.Tensor,
        context: Sequence[int],
        frame_mask: torch.Tensor | None = None,
    ) -> tuple[DecodeState, StepOutput]:
        memory, h = self.build_memory(pixels)
        state = DecodeState(
            memory_kv=[blk.cross_attn.keys_values(memory) for blk in self.blocks],
            frame_weights=self._frame_weights(frame_mask, memory.shape[1]),
            frame_features=h,
            caches=[{} for _ in self.blocks],
            position=0,
        )
        return state, self._advance(state, list(context))

    def decode_step(self, state: DecodeState, token: int) -> StepOutput:
        return self._advance(state, [token])

    def _advance(self, state: DecodeState, ids: list[int]) -> StepOutput:
        n = len(ids)
        pos = torch.arange(state.position, state.position + n)
        x = self.token_embed(torch.tensor([ids])) + self.pos_embed(pos)
        outs, attn = [], None
        for blk, kv, cache in zip(self.blocks, state.memory_kv, state.caches):
            x, attn, _ = blk(x, kv, state.frame_weights, cache=cache)
            outs.append(x)
        state.position += n
        hidden = self._hidden(outs)
        return StepOutput(
            logits=self.head(self.ln_final(x))[0, -1],
            hidden=hidden[0, -1],
            attention=attn[0, -1],
        )


def build_victim(config: VictimConfig, seed: int, vocab: VocabSpec | None = None) -> ToyCaptioner:
    """Deterministically initialised float64 victim; global RNG state untouched."""
    vocab = vocab or VocabSpec.default(config.vocab_size)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = ToyCaptioner(config, vocab, seed=seed)
    return model.double()


def freeze(model: ToyCaptioner) -> ToyCaptioner:
    """Inference-only: eval mode, no parameter gradients."""
    model.eval()
    model.requires_grad_(False)
    return model


# ---------------------------------------------------------------------------
# Victim interface
# ---------------------------------------------------------------------------
def _check_sample(model: ToyCaptioner, sample: PixelSample) -> None:
    cfg = model.config
    if sample.kind.value != cfg.kind:
        raise VerboseSamplesError(
            FailCode.FAIL_SHAPE_MISMATCH, f"{sample.kind.value} sample given to a {cfg.kind} victim",
        )
    if sample.spatial != (cfg.image_size, cfg.image_size):
        raise VerboseSamplesError(
            FailCode.FAIL_SHAPE_MISMATCH,
            f"frame is {sample.spatial}, victim expects {cfg.image_size}×{cfg.image_size}",
        )
    if sample.n_frames != cfg.n_frames:
        raise VerboseSamplesError(
            FailCode.FAIL_SHAPE_MISMATCH,
            f"sample has {sample.n_frames} frames, victim expects {cfg.n_frames}",
        )


def _pixels(frames: NDArray[np.float64] | torch.Tensor) -> torch.Tensor:
    if isinstance(frames, torch.Tensor):
        return frames.to(torch.float64)
    # sample frames are read-only; torch needs a writable buffer
    return torch.from_numpy(np.array(frames, dtype=np.float64, copy=True))


def encode_image(model: ToyCaptioner, frame: NDArray[np.float64]) -> NDArray[np.float64]:
    """Patch feature sequence (P, d) of one H×W×3 frame."""
    f = np.asarray(frame, dtype=np.float64)
    size = model.config.image_size
    if f.shape != (size, size, 3):
        raise VerboseSamplesError(
            FailCode.FAIL_SHAPE_MISMATCH, f"frame shape {f.shape}, expected {(size, size, 3)}",
        )
    with torch.no_grad():
        feats = model.encode_frames(_pixels(f)[None, None])
    return feats[0, 0].numpy()


def encode_video(model: ToyCaptioner, sample: PixelSample) -> NDArray[np.float64]:
    """Frame features h₁..h_M, shape (M, D)."""
    if sample.kind != SampleKind.VIDEO or not model.is_video:
        raise VerboseSamplesError(FailCode.FAIL_SHAPE_MISMATCH, "encode_video needs a video sample and victim")
    _check_sample(model, sample)
    with torch.no_grad():
        feats = model.encode_frames(_pixels(sample.frames)[None])
        h = model.frame_features(feats)
    return h[0].numpy()


def _context(model: ToyCaptioner, prompt: Sequence[int]) -> list[int]:
    model.vocab.check_ids(list(prompt))
    return [model.vocab.bos_id, *[int(p) for p in prompt]]


def _choose(
    probs: NDArray[np.float64],
    banned: list[int],
    policy: DecodePolicy,
    rng: np.random.Generator | None,
) -> int:
    q = probs.copy()
    q[banned] = 0.0
    q /= q.sum()
    if policy.kind == "greedy":
        return int(np.argmax(q))
    if rng is None:
        raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, "nucleus decoding needs an rng")
    order = np.argsort(-q, kind="stable")
    cum = np.cumsum(q[order])
    cut = min(int(np.searchsorted(cum, policy.top_p)) + 1, order.size)
    keep = order[:cut]
    return int(rng.choice(keep, p=q[keep] / q[keep].sum()))


@torch.no_grad()
def generate(
    model: ToyCaptioner,
    sample: PixelSample,
    prompt: Sequence[int] = (),
    policy: DecodePolicy | None = None,
    max_length: int = 512,
    rng: np.random.Generator | None = None,
    suppress_eos: bool = False,
    frame_mask: Sequence[bool] | None = None,
) -> GenerationTrace:
    """
    Decode until EOS or *max_length* tokens. EOS, when emitted, is the
    last token and counts toward N. PAD and BOS are never emitted;
    *suppress_eos* also forbids EOS (forced-length decodes).
    """
    policy = policy or DecodePolicy.greedy()
    _check_sample(model, sample)
    context = _context(model, prompt)
    if len(context) + max_length > model.config.max_positions:
        raise VerboseSamplesError(
            FailCode.FAIL_CONFIG_INVALID,
            f"prompt + max_length exceeds max_positions={model.config.max_positions}",
        )
    vocab = model.vocab
    banned = [vocab.pad_id, vocab.bos_id] + ([vocab.eos_id] if suppress_eos else [])
    mask = None if frame_mask is None else torch.as_tensor(list(frame_mask), dtype=torch.bool)

    state, step = model.start_decode(_pixels(sample.frames)[None], context, mask)
    tokens: list[int] = []
    dists, logits, hidden, attn = [], [], [], []
    while len(tokens) < max_length:
        p = torch.softmax(step.logits, dim=-1)
        dists.append(p.numpy())
        logits.append(step.logits.numpy())
        hidden.append(step.hidden.numpy())
        attn.append(step.attention.numpy())
        tok = _choose(dists[-1], banned, policy, rng)
        tokens.append(tok)
        if tok == vocab.eos_id or len(tokens) == max_length:
            break
        step = model.decode_step(state, tok)

    def _stack(rows: list[NDArray[np.float64]], width: int) -> NDArray[np.float64]:
        return np.stack(rows) if rows else np.zeros((0, width))

    ff = None if state.frame_features is None else state.frame_features[0].numpy()
    return GenerationTrace(
        tokens=tokens,
        distributions=_stack(dists, vocab.size),
        logits=_stack(logits, vocab.size),
        hidden_states=_stack(hidden, model.hidden_width),
        attentions=_stack(attn, model.config.n_frames * model.config.n_patches),
        frame_features=ff,
        prompt=list(prompt),
        eos_id=vocab.eos_id,
        max_length=max_length,
    )


def forward_frames(
    model: ToyCaptioner,
    pixels: torch.Tensor,
    tokens: Sequence[int],
    prompt: Sequence[int] = (),
    frame_mask: Sequence[bool] | None = None,
) -> ForwardPass:
    """Teacher-forced pass on a raw (M, H, W, 3) tensor; no range validation."""
    tokens = [int(t) for t in tokens]
    model.vocab.check_ids(tokens)
    context = _context(model, prompt)
    inputs = context + tokens[:-1] if tokens else context
    mask = None if frame_mask is None else torch.as_tensor(list(frame_mask), dtype=torch.bool)
    out = model(pixels[None], torch.tensor([inputs]), mask)
    start = len(context) - 1
    sl = slice(start, start + len(tokens))
    return ForwardPass(
        tokens=torch.tensor(tokens, dtype=torch.int64),
        logits=out.logits[0, sl],
        hidden=out.hidden[0, sl],
        attentions=out.attentions[0, sl],
        frame_features=None if out.frame_features is None else out.frame_features[0],
        eos_id=model.vocab.eos_id,
        activations=[a[0] for a in out.activations],
    )


def teacher_forced_forward(
    model: ToyCaptioner,
    sample: PixelSample,
    tokens: Sequence[int],
    prompt: Sequence[int] = (),
    frame_mask: Sequence[bool] | None = None,
) -> ForwardPass:
    """Recompute f_i, g_i, attention and h_j with the sequence held fixed."""
    _check_sample(model, sample)
    return forward_frames(model, _pixels(sample.frames), tokens, prompt, frame_mask)


def sequence_log_prob(trace: GenerationTrace) -> float:
    """Σ ln f_i[y_i] over the realized tokens."""
    if trace.length == 0:
        return 0.0
    realized = trace.distributions[np.arange(trace.length), trace.tokens]
    if np.any(realized <= 0.0):
        step = int(np.flatnonzero(realized <= 0.0)[0])
        raise VerboseSamplesError(
            FailCode.FAIL_ZERO_PROBABILITY, f"realized token at step {step} has probability 0", step=step,
        )
    return float(np.log(realized).sum())


def _scalar(loss: torch.Tensor | float) -> torch.Tensor | None:
    """None means the loss is a constant (zero gradient)."""
    if isinstance(loss, (int, float)):
        return None
    if not isinstance(loss, torch.Tensor) or loss.numel() != 1:
        raise VerboseSamplesError(FailCode.FAIL_NON_DIFFERENTIABLE, "loss_fn must return a scalar tensor")
    if not bool(torch.isfinite(loss)):
        raise VerboseSamplesError(FailCode.FAIL_NON_FINITE, "loss_fn returned a non-finite value")
    return loss.reshape(()) if loss.requires_grad else None


def input_gradient(
    model: ToyCaptioner,
    frames: NDArray[np.float64],
    tokens: Sequence[int],
    loss_fn: LossFn,
    prompt: Sequence[int] = (),
    frame_mask: Sequence[bool] | None = None,
) -> tuple[float, NDArray[np.float64]]:
    """(loss value, ∂loss/∂pixels) for a raw frame array."""
    pixels = _pixels(np.array(frames, dtype=np.float64)).requires_grad_(True)
    fp = forward_frames(model, pixels, tokens, prompt, frame_mask)
    raw = loss_fn(fp)
    loss = _scalar(raw)
    if loss is None:
        value = float(raw) if isinstance(raw, (int, float)) else float(raw.detach())
        return value, np.zeros(pixels.shape)
    (grad,) = torch.autograd.grad(loss, pixels, allow_unused=True)
    if grad is None:
        return float(loss.detach()), np.zeros(pixels.shape)
    return float(loss.detach()), grad.detach().numpy()


def backward_to_input(
    model: ToyCaptioner,
    sample: PixelSample,
    tokens: Sequence[int],
    loss_fn: LossFn,
    prompt: Sequence[int] = (),
    frame_mask: Sequence[bool] | None = None,
) -> NDArray[np.float64]:
    """Per-pixel gradient of loss_fn under teacher forcing, shaped like the sample."""
    _check_sample(model, sample)
    _, grad = input_gradient(model, sample.frames, tokens, loss_fn, prompt, frame_mask)
    return grad


@torch.no_grad()
def loss_value(
    model: ToyCaptioner,
    frames: NDArray[np.float64],
    tokens: Sequence[int],
    loss_fn: LossFn,
    prompt: Sequence[int] = (),
    frame_mask: Sequence[bool] | None = None,
) -> float:
    """Scalar loss at raw frames; the finite-difference oracle evaluates this."""
    fp = forward_frames(model, _pixels(np.asarray(frames, dtype=np.float64)), tokens, prompt, frame_mask)
    return float(loss_fn(fp))
