"""
Optimisation loop shared by post-training and fine-tuning.

The loop is the same for every stage; what a stage learns is decided
entirely by the masks its sequences carry.
"""
import logging
import math
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from ..entities import (
    InvalidArgumentError,
    Modality,
    TokenSequence,
    TrainConfig,
    TrainingDivergedError,
    Vocabulary,
)
from . import ar_model
from .vocab import classify

logger = logging.getLogger(__name__)

MetricRecord = Dict[str, Any]


def cosine_lr(step: int, total: int, lr0: float) -> float:
    if total < 1:
        raise InvalidArgumentError(f"total steps must be >= 1, got {total}")
    if not 0 <= step <= total:
        raise InvalidArgumentError(f"step {step} outside [0, {total}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total))


def learning_rate(step: int, cfg: TrainConfig) -> float:
    if cfg.schedule == "constant":
        return cfg.lr0
    return cosine_lr(step, cfg.steps, cfg.lr0)


def _check_positions(ids: Sequence[int], mask: Sequence[bool],
                     expected: Modality, vocab: Vocabulary, label: str):
    for position, flagged in enumerate(mask):
        if flagged and classify(ids[position], vocab) != expected:
            raise InvalidArgumentError(
                f"{label} selects a {classify(ids[position], vocab).value} "
                f"token at position {position}, expected {expected.value}"
            )


def check_dataset(dataset: Sequence[TokenSequence], cfg: TrainConfig,
                  vocab: Vocabulary):
    """Every target must belong to the modality the strategy supervises."""
    if not dataset:
        raise InvalidArgumentError("training dataset is empty")
    expected = cfg.strategy.supervised_modality
    for seq in dataset:
        if seq.masked_count == 0:
            raise InvalidArgumentError("a sequence has no target positions")
        _check_positions(seq.ids, seq.mask, expected, vocab, "mask")
        if cfg.joint:
            if seq.vision_mask is None:
                raise InvalidArgumentError(
                    "joint fine-tuning needs sequences with a vision mask"
                )
            _check_positions(seq.ids, seq.vision_mask, Modality.VISION,
                             vocab, "vision mask")


def collate(batch: Sequence[TokenSequence], pad_id: int):
    """Right-pad to the longest sequence; padding is never a target."""
    width = max(len(seq) for seq in batch)
    ids = torch.full((len(batch), width), pad_id, dtype=torch.long)
    mask = torch.zeros((len(batch), width), dtype=torch.bool)
    vision = torch.zeros((len(batch), width), dtype=torch.bool)
    for row, seq in enumerate(batch):
        ids[row, :len(seq)] = torch.as_tensor(seq.ids, dtype=torch.long)
        mask[row, :len(seq)] = torch.as_tensor(seq.mask, dtype=torch.bool)
        if seq.vision_mask is not None:
            vision[row, :len(seq)] = torch.as_tensor(seq.vision_mask,
                                                     dtype=torch.bool)
    return ids, mask, vision


def batch_loss(model: ar_model.VlaTransformer, batch: Sequence[TokenSequence],
               cfg: TrainConfig, pad_id: int) -> torch.Tensor:
    ids, mask, vision = collate(batch, pad_id)
    logits = ar_model.forward(model, ids)
    if cfg.joint:
        return ar_model.loss_weighted(logits, ids, vision, mask,
                                      cfg.w_v, cfg.w_a)
    return ar_model.loss(logits, ids, mask)


def run_stage(model: ar_model.VlaTransformer,
              dataset: Sequence[TokenSequence], cfg: TrainConfig,
              vocab: Vocabulary,
              on_record: Optional[Callable[[MetricRecord], None]] = None,
              progress: bool = False) -> List[MetricRecord]:
    """
    Run `cfg.steps` AdamW steps on batches drawn with replacement.

    Batch order comes from a numpy Generator seeded with `cfg.seed`, and the
    torch RNG is forked and seeded so dropout is reproducible as well.
    """
    check_dataset(dataset, cfg, vocab)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr0,
                                  betas=cfg.betas,
                                  weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    records: List[MetricRecord] = []
    model.train()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        for step in tqdm(range(cfg.steps), desc=f"{cfg.stage}",
                         disable=not progress):
            lr = learning_rate(step, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            picks = rng.integers(0, len(dataset), size=cfg.batch_size)
            batch = [dataset[i] for i in picks]
            value = batch_loss(model, batch, cfg, vocab.pad)
            if not torch.isfinite(value):
                diagnostics = {"step": step, "lr": lr,
                               "loss": float(value.detach()),
                               "strategy": cfg.strategy.value}
                raise TrainingDivergedError(
                    f"non-finite loss at step {step} of {cfg.stage}",
                    diagnostics,
                )
            optimizer.zero_grad(set_to_none=True)
            value.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            record = {
                "stage": cfg.stage,
                "strategy": cfg.strategy.value,
                "step": step,
                "lr": lr,
                "loss": float(value.detach()),
                "masked_tokens": int(sum(seq.masked_count for seq in batch)),
            }
            records.append(record)
            if on_record is not None:
                on_record(record)
            if step % cfg.log_every == 0 or step == cfg.steps - 1:
                logger.info("%s step %d loss %.4f", cfg.stage, step,
                            record["loss"], extra=record)
    model.eval()
    return records


def smoothed_losses(records: Sequence[MetricRecord],
                    window: int = 20) -> pd.Series:
    frame = pd.DataFrame(records)
    return frame["loss"].rolling(window, min_periods=1).mean()


def final_loss(records: Sequence[MetricRecord], window: int = 20) -> float:
    if not records:
        raise InvalidArgumentError("no training records")
    return float(smoothed_losses(records, window).iloc[-1])


def steps_to_threshold(records: Sequence[MetricRecord], threshold: float,
                       window: int = 20) -> Optional[int]:
    """First step whose smoothed loss is at or below `threshold`."""
    if not records:
        return None
    smoothed = smoothed_losses(records, window)
    hits = np.flatnonzero(smoothed.to_numpy() <= threshold)
    if len(hits) == 0:
        return None
    return int(records[int(hits[0])]["step"]) + 1
