"""
Small decoder-only causal transformer over the shared vocabulary.

Pre-norm blocks with learned positional embeddings, a final layer norm and
an untied output head. Losses take targets separately from the inputs so
that label-only changes can be tested.
"""
import logging
import math
import struct
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..entities import (
    ContextOverflowError,
    CorruptStreamError,
    DataError,
    InvalidArgumentError,
    ModelConfig,
)

logger = logging.getLogger(__name__)

CKPT_MAGIC = b"VLAM"
CKPT_VERSION = 1
CKPT_HEADER = struct.Struct("<4sI6IfI")

TokenIds = Union[torch.Tensor, Sequence[int]]


class CausalSelfAttention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.head_dim = cfg.head_dim
        self.qkv = nn.Linear(cfg.d_model, 3 * cfg.d_model)
        self.proj = nn.Linear(cfg.d_model, cfg.d_model)
        self.attn_dropout = nn.Dropout(cfg.dropout)
        self.resid_dropout = nn.Dropout(cfg.dropout)
        causal = torch.tril(torch.ones(cfg.max_seq_len, cfg.max_seq_len,
                                       dtype=torch.bool))
        self.register_buffer("causal", causal, persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, T, C = x.shape
        q, k, v = self.qkv(x).split(C, dim=2)
        q = q.view(B, T, self.n_heads, self.head_dim).transpose(1, 2)
        k = k.view(B, T, self.n_heads, self.head_dim).transpose(1, 2)
        v = v.view(B, T, self.n_heads, self.head_dim).transpose(1, 2)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~self.causal[:T, :T], float("-inf"))
        weights = self.attn_dropout(F.softmax(scores, dim=-1))
        out = (weights @ v).transpose(1, 2).contiguous().view(B, T, C)
        return self.resid_dropout(self.proj(out))


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = CausalSelfAttention(cfg)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.d_ff),
            nn.GELU(),
            nn.Linear(cfg.d_ff, cfg.d_model),
            nn.Dropout(cfg.dropout),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class VlaTransformer(nn.Module):
    """Token + position embeddings, pre-norm blocks, untied head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos_emb = nn.Embedding(cfg.max_seq_len, cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)
        self.apply(self._init_weights)

    @staticmethod
    def _init_weights(module: nn.Module):
        if isinstance(module, (nn.Linear, nn.Embedding)):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)
            if getattr(module, "bias", None) is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.LayerNorm):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        T = ids.shape[1]
        positions = torch.arange(T, device=ids.device)
        x = self.drop(self.tok_emb(ids) + self.pos_emb(positions))
        for block in self.blocks:
            x = block(x)
        return self.head(self.ln_f(x))


def init_model(cfg: ModelConfig, seed: int) -> VlaTransformer:
    """Same seed, same weights; the global torch RNG is left untouched."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = VlaTransformer(cfg)
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def _as_batch(ids: TokenIds, device: torch.device) -> torch.Tensor:
    tensor = torch.as_tensor(ids, dtype=torch.long, device=device)
    if tensor.dim() == 1:
        tensor = tensor.unsqueeze(0)
    return tensor


def forward(model: VlaTransformer, ids: TokenIds) -> torch.Tensor:
    """Logits for a 1-D id list (T x V) or a batch (B x T x V)."""
    device = next(model.parameters()).device
    batch = _as_batch(ids, device)
    if batch.shape[1] > model.cfg.max_seq_len:
        raise InvalidArgumentError(
            f"sequence of {batch.shape[1]} exceeds max_seq_len "
            f"{model.cfg.max_seq_len}"
        )
    if batch.numel() and (batch.min() < 0
                          or batch.max() >= model.cfg.vocab_size):
        raise InvalidArgumentError("token id outside the model vocabulary")
    logits = model(batch)
    if torch.as_tensor(ids).dim() == 1:
        return logits[0]
    return logits


def _token_nll(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Per-position -log p(target[p] | logits[p-1]) in float64; position 0 gets 0."""
    log_probs = F.log_softmax(logits[..., :-1, :].double(), dim=-1)
    nll = -log_probs.gather(-1, targets[..., 1:].unsqueeze(-1)).squeeze(-1)
    return F.pad(nll, (1, 0))


def _as_mask(mask, like: torch.Tensor) -> torch.Tensor:
    mask = torch.as_tensor(mask, dtype=torch.bool, device=like.device)
    if mask.shape != like.shape:
        raise InvalidArgumentError(
            f"mask shape {tuple(mask.shape)} != targets {tuple(like.shape)}"
        )
    if mask[..., 0].any():
        raise InvalidArgumentError("position 0 has no context to predict it")
    return mask


def loss(logits: torch.Tensor, targets: TokenIds, mask) -> torch.Tensor:
    """Mean cross-entropy over masked target positions."""
    targets = torch.as_tensor(targets, dtype=torch.long, device=logits.device)
    mask = _as_mask(mask, targets)
    count = mask.sum()
    if count == 0:
        raise InvalidArgumentError("mask selects no target positions")
    nll = _token_nll(logits, targets)
    return (nll * mask).sum() / count


def loss_weighted(logits: torch.Tensor, targets: TokenIds, mask_vision,
                  mask_action, w_v: float, w_a: float) -> torch.Tensor:
    targets = torch.as_tensor(targets, dtype=torch.long, device=logits.device)
    mask_v = _as_mask(mask_vision, targets)
    mask_a = _as_mask(mask_action, targets)
    if (mask_v & mask_a).any():
        raise InvalidArgumentError("vision and action masks overlap")
    denominator = w_v * mask_v.sum() + w_a * mask_a.sum()
    if denominator <= 0:
        raise InvalidArgumentError("weighted masks select no targets")
    nll = _token_nll(logits, targets)
    total = w_v * (nll * mask_v).sum() + w_a * (nll * mask_a).sum()
    return total / denominator


@torch.no_grad()
def generate(model: VlaTransformer, prefix: Sequence[int],
             stop: Iterable[int], max_new: int, mode: str = "greedy",
             top_k: int = 5, seed: Optional[int] = None,
             until: Optional[Callable[[List[int]], bool]] = None
             ) -> List[int]:
    """
    Extend `prefix` until a stop token is emitted or `max_new` tokens.

    `until`, when given, sees the tokens generated so far after every step
    and ends generation by returning True. Returns the full id list, prefix
    included. Running out of context before stopping is a
    ContextOverflowError.
    """
    if mode not in ("greedy", "top_k"):
        raise InvalidArgumentError(f"unknown decoding mode {mode!r}")
    stop = set(stop)
    limit = model.cfg.max_seq_len
    if len(prefix) > limit:
        raise ContextOverflowError(
            f"prefix of {len(prefix)} does not fit a context of {limit}"
        )
    was_training = model.training
    model.eval()
    generator = None
    if mode == "top_k":
        generator = torch.Generator().manual_seed(seed or 0)
    ids = [int(t) for t in prefix]
    try:
        for _ in range(max_new):
            if len(ids) >= limit:
                raise ContextOverflowError(
                    f"context of {limit} filled before a stop token"
                )
            logits = forward(model, ids)[-1].float().cpu()
            if mode == "greedy":
                token = int(torch.argmax(logits))
            else:
                values, indices = torch.topk(logits, min(top_k, len(logits)))
                probs = F.softmax(values, dim=-1)
                pick = torch.multinomial(probs, 1, generator=generator)
                token = int(indices[pick])
            ids.append(token)
            if token in stop:
                break
            if until is not None and until(ids[len(prefix):]):
                break
    finally:
        model.train(was_training)
    return ids


def save_checkpoint(model: VlaTransformer, path: Path) -> Path:
    """Header with config fields, then named little-endian float32 tensors."""
    cfg = model.cfg
    state = model.state_dict()
    chunks = [CKPT_HEADER.pack(
        CKPT_MAGIC, CKPT_VERSION, cfg.vocab_size, cfg.d_model, cfg.n_layers,
        cfg.n_heads, cfg.d_ff, cfg.max_seq_len, cfg.dropout, len(state),
    )]
    for name, tensor in state.items():
        encoded = name.encode("utf-8")
        data = tensor.detach().cpu().to(torch.float32).contiguous()
        chunks.append(struct.pack("<I", len(encoded)) + encoded)
        chunks.append(struct.pack(f"<I{data.dim()}I", data.dim(),
                                  *data.shape))
        chunks.append(data.numpy().astype("<f4").tobytes())
    path.write_bytes(b"".join(chunks))
    return path


def load_checkpoint(path: Path) -> VlaTransformer:
    if not path.exists():
        raise DataError("checkpoint not found", path)
    raw = path.read_bytes()
    try:
        (magic, version, vocab_size, d_model, n_layers, n_heads, d_ff,
         max_seq_len, dropout, count) = CKPT_HEADER.unpack_from(raw)
    except struct.error:
        raise CorruptStreamError(f"truncated checkpoint header in {path}")
    if magic != CKPT_MAGIC or version != CKPT_VERSION:
        raise CorruptStreamError(f"unsupported checkpoint format in {path}")
    cfg = ModelConfig(vocab_size=vocab_size, d_model=d_model,
                      n_layers=n_layers, n_heads=n_heads, d_ff=d_ff,
                      max_seq_len=max_seq_len, dropout=round(dropout, 6))
    offset = CKPT_HEADER.size
    state = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            shape = struct.unpack_from(f"<{rank}I", raw, offset)
            offset += 4 * rank
            numel = math.prod(shape)
            array = np.frombuffer(raw, dtype="<f4", count=numel,
                                  offset=offset)
            offset += 4 * numel
            state[name] = torch.from_numpy(
                array.astype(np.float32).reshape(shape)
            )
    except (struct.error, RuntimeError, ValueError):
        raise CorruptStreamError(f"truncated checkpoint body in {path}")
    model = init_model(cfg, seed=0)
    try:
        model.load_state_dict(state)
    except RuntimeError as e:
        raise CorruptStreamError(f"checkpoint tensors do not fit: {e}")
    return model
