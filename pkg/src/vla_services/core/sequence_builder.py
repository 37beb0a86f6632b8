"""
Interleaved sequence packing with per-task loss masks.

Vision blocks are bracketed by BOI/EOI and action blocks by BOA/EOA. The
mask marks prediction targets only; BOS, EOS, brackets and the instruction
are never targets.
"""
import logging
import struct
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..entities import (
    CorruptStreamError,
    DataError,
    HistoryConfig,
    InvalidArgumentError,
    Modality,
    SequenceTooLongError,
    Span,
    TokenSequence,
    Vocabulary,
)

logger = logging.getLogger(__name__)

SHARD_MAGIC = b"VLAS"
SHARD_VERSION = 1
SHARD_HEADER = struct.Struct("<4sII")
RECORD_HEADER = struct.Struct("<IB")

Step = Tuple[object, Optional[Sequence[int]]]


def frame_views(frame) -> List[List[int]]:
    """A frame is one grid (1-D or 2-D) or a stack of same-shape views."""
    array = np.asarray(frame, dtype=np.int64)
    if array.ndim == 3:
        return [view.reshape(-1).tolist() for view in array]
    if array.ndim in (1, 2):
        return [array.reshape(-1).tolist()]
    raise InvalidArgumentError(f"unsupported frame shape {array.shape}")


class _Assembler:
    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self.ids: List[int] = []
        self.mask: List[bool] = []
        self.vision_mask: List[bool] = []
        self.spans: List[Span] = []

    def special(self, token_id: int):
        self.ids.append(token_id)
        self.mask.append(False)
        self.vision_mask.append(False)

    def _run(self, tokens: Sequence[int], modality: Modality, timestep: int,
             supervise: bool, supervise_vision: bool = False):
        start = len(self.ids)
        self.ids.extend(int(t) for t in tokens)
        self.mask.extend([supervise] * len(tokens))
        self.vision_mask.extend([supervise_vision] * len(tokens))
        self.spans.append(Span(modality, start, len(self.ids), timestep))

    def text(self, tokens: Sequence[int]):
        if any(t not in self.vocab.text_range for t in tokens):
            raise InvalidArgumentError("instruction holds non-text tokens")
        if tokens:
            self._run(tokens, Modality.TEXT, 0, False)

    def frame(self, frame, timestep: int, supervise: bool,
              supervise_vision: bool = False):
        for view in frame_views(frame):
            if not view or any(t not in self.vocab.vision_range
                               for t in view):
                raise InvalidArgumentError(
                    f"frame {timestep} holds non-vision tokens"
                )
            self.special(self.vocab.boi)
            self._run(view, Modality.VISION, timestep, supervise,
                      supervise_vision)
            self.special(self.vocab.eoi)

    def actions(self, tokens: Sequence[int], timestep: int, supervise: bool):
        if not tokens or any(t not in self.vocab.action_range
                             for t in tokens):
            raise InvalidArgumentError(
                f"action block {timestep} is empty or holds non-action tokens"
            )
        self.special(self.vocab.boa)
        self._run(tokens, Modality.ACTION, timestep, supervise)
        self.special(self.vocab.eoa)


class SequenceBuilder:
    """Builds every sequence strategy over one vocabulary."""

    def __init__(self, vocab: Vocabulary, max_seq_len: int = 1024,
                 mask_history_actions: bool = False):
        self.vocab = vocab
        self.max_seq_len = max_seq_len
        self.mask_history_actions = mask_history_actions

    def _finish(self, asm: _Assembler,
                with_vision_mask: bool = False) -> TokenSequence:
        if len(asm.ids) > self.max_seq_len:
            raise SequenceTooLongError(
                f"packed sequence has {len(asm.ids)} tokens, "
                f"limit is {self.max_seq_len}"
            )
        return TokenSequence(
            ids=asm.ids,
            mask=asm.mask,
            spans=asm.spans,
            vision_mask=asm.vision_mask if with_vision_mask else None,
        )

    def world_model(self, instr: Sequence[int],
                    frames: Sequence) -> TokenSequence:
        """Text, then frames; every frame but the first is a target."""
        if len(frames) < 2:
            raise InvalidArgumentError("world-model sequences need >= 2 frames")
        asm = _Assembler(self.vocab)
        asm.special(self.vocab.bos)
        asm.text(instr)
        for t, frame in enumerate(frames):
            asm.frame(frame, t, supervise=t > 0)
        asm.special(self.vocab.eos)
        return self._finish(asm)

    def video(self, frames: Sequence) -> TokenSequence:
        if len(frames) < 2:
            raise InvalidArgumentError("video sequences need >= 2 frames")
        asm = _Assembler(self.vocab)
        asm.special(self.vocab.bos)
        for t, frame in enumerate(frames):
            asm.frame(frame, t, supervise=t > 0)
        asm.special(self.vocab.eos)
        return self._finish(asm)

    def t2i(self, instr: Sequence[int], frame) -> TokenSequence:
        if not len(instr):
            raise InvalidArgumentError("text-to-image needs an instruction")
        asm = _Assembler(self.vocab)
        asm.special(self.vocab.bos)
        asm.text(instr)
        asm.frame(frame, 0, supervise=True)
        asm.special(self.vocab.eos)
        return self._finish(asm)

    def action_pred(self, instr: Sequence[int], frame,
                    action_tokens: Sequence[int]) -> TokenSequence:
        if frame is None:
            raise InvalidArgumentError("action prediction needs a frame")
        asm = _Assembler(self.vocab)
        asm.special(self.vocab.bos)
        asm.text(instr)
        asm.frame(frame, 0, supervise=False)
        asm.actions(action_tokens, 0, supervise=True)
        asm.special(self.vocab.eos)
        return self._finish(asm)

    def policy(self, instr: Sequence[int], steps: Sequence[Step],
               history: HistoryConfig,
               supervise_frames: bool = False) -> TokenSequence:
        """
        Interleaved frame/action window ending at the last step.

        `steps[i]` is the (frame, action tokens) pair of environment step
        i. Only the final action block is a target unless
        ``mask_history_actions`` is set. With `supervise_frames`, the
        vision tokens of every retained frame after the first also go into
        ``vision_mask``.
        """
        if not steps:
            raise InvalidArgumentError("policy sequences need >= 1 step")
        retained = history.retained_indices(len(steps) - 1)
        asm = _Assembler(self.vocab)
        asm.special(self.vocab.bos)
        asm.text(instr)
        for position, index in enumerate(retained):
            frame, action_tokens = steps[index]
            last = position == len(retained) - 1
            asm.frame(frame, index, supervise=False,
                      supervise_vision=supervise_frames and position > 0)
            asm.actions(action_tokens or [], index,
                        supervise=last or self.mask_history_actions)
        asm.special(self.vocab.eos)
        return self._finish(asm, with_vision_mask=supervise_frames)

    def policy_prompt(self, instr: Sequence[int], steps: Sequence[Step],
                      history: HistoryConfig) -> List[int]:
        """Policy layout up to and including the BOA of the last step."""
        if not steps:
            raise InvalidArgumentError("a prompt needs >= 1 step")
        retained = history.retained_indices(len(steps) - 1)
        asm = _Assembler(self.vocab)
        asm.special(self.vocab.bos)
        asm.text(instr)
        for position, index in enumerate(retained):
            frame, action_tokens = steps[index]
            asm.frame(frame, index, supervise=False)
            if position < len(retained) - 1:
                asm.actions(action_tokens or [], index, supervise=False)
        asm.special(self.vocab.boa)
        if len(asm.ids) > self.max_seq_len:
            raise SequenceTooLongError(
                f"prompt has {len(asm.ids)} tokens, "
                f"limit is {self.max_seq_len}"
            )
        return asm.ids


def _pack_bits(flags: Sequence[bool]) -> bytes:
    return np.packbits(np.asarray(flags, dtype=bool)).tobytes()


def write_shard(sequences: Sequence[TokenSequence], path: Path) -> Path:
    """Binary shard: header, then per sequence length, ids, packed masks."""
    chunks = [SHARD_HEADER.pack(SHARD_MAGIC, SHARD_VERSION, len(sequences))]
    for seq in sequences:
        has_vision = seq.vision_mask is not None
        chunks.append(RECORD_HEADER.pack(len(seq), int(has_vision)))
        chunks.append(np.asarray(seq.ids, dtype="<u4").tobytes())
        chunks.append(_pack_bits(seq.mask))
        if has_vision:
            chunks.append(_pack_bits(seq.vision_mask))
    path.write_bytes(b"".join(chunks))
    logger.debug("Wrote %d sequences to %s", len(sequences), path)
    return path


def read_shard(path: Path) -> List[TokenSequence]:
    if not path.exists():
        raise DataError("sequence shard not found", path)
    raw = path.read_bytes()
    try:
        magic, version, count = SHARD_HEADER.unpack_from(raw)
    except struct.error:
        raise CorruptStreamError(f"truncated shard header in {path}")
    if magic != SHARD_MAGIC or version != SHARD_VERSION:
        raise CorruptStreamError(f"unsupported shard format in {path}")
    offset = SHARD_HEADER.size
    sequences = []
    try:
        for _ in range(count):
            length, has_vision = RECORD_HEADER.unpack_from(raw, offset)
            offset += RECORD_HEADER.size
            ids = np.frombuffer(raw, dtype="<u4", count=length, offset=offset)
            offset += 4 * length
            n_bytes = (length + 7) // 8
            masks = []
            for _ in range(1 + has_vision):
                packed = np.frombuffer(raw, dtype=np.uint8, count=n_bytes,
                                       offset=offset)
                masks.append(np.unpackbits(packed)[:length].astype(bool))
                offset += n_bytes
            sequences.append(TokenSequence(
                ids=ids.astype(np.int64).tolist(),
                mask=masks[0].tolist(),
                vision_mask=masks[1].tolist() if has_vision else None,
            ))
    except (struct.error, ValueError):
        raise CorruptStreamError(f"truncated shard body in {path}")
    if offset != len(raw):
        raise CorruptStreamError(f"trailing bytes in shard {path}")
    return sequences
