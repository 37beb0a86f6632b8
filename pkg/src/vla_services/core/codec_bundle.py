"""Fitted tokenizers for all three modalities, saved and loaded together."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np

from ..entities import (
    ActionChunk,
    ArtifactNotFoundError,
    CorruptStreamError,
    DataError,
    Vocabulary,
    VQCodebook,
)
from . import action_codec, bpe, vision_codec, vocab as vocab_io
from .action_codec import ActionTokenizer
from .file_writer import FileWriter
from .vision_codec import PatchVQTokenizer
from .vocab import TextTokenizer

logger = logging.getLogger(__name__)

VOCAB_FILE = "vocab.tsv"
CODEBOOK_FILE = "codebook.bin"
STATS_FILE = "action_stats.txt"
BPE_FILE = "bpe.txt"
SETTINGS_FILE = "codecs.json"
BUNDLE_FILES = (VOCAB_FILE, CODEBOOK_FILE, STATS_FILE, BPE_FILE,
                SETTINGS_FILE)


@dataclass
class CodecBundle:
    """Vocabulary plus the text, image and action tokenizers bound to it."""
    vocab: Vocabulary
    codebook: VQCodebook
    actions: ActionTokenizer
    relative_mode: str = "consecutive"

    def __post_init__(self):
        self.text = TextTokenizer(self.vocab)
        self.images = PatchVQTokenizer(self.codebook, self.vocab)

    @property
    def chunk_size(self) -> int:
        return self.actions.H

    def encode_instruction(self, instruction: str) -> List[int]:
        return self.text.encode(instruction)

    def encode_frame(self, frame) -> np.ndarray:
        return self.images.encode(frame)

    def encode_frames(self, frames: Sequence) -> List[np.ndarray]:
        return [self.images.encode(frame) for frame in frames]

    def chunk(self, poses, start: int, stop: int) -> np.ndarray:
        return action_codec.chunk_between(poses, start, stop,
                                          self.chunk_size, self.relative_mode)

    def chunk_tokens(self, poses, start: int, stop: int) -> List[int]:
        return self.actions.encode(self.chunk(poses, start, stop))

    def decode_chunk(self, tokens: Sequence[int]) -> ActionChunk:
        return self.actions.decode(tokens)


def save_bundle(bundle: CodecBundle, root: Path,
                file_writer: FileWriter) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    vocab_io.save_vocab(bundle.vocab, root / VOCAB_FILE)
    vision_codec.save_codebook(bundle.codebook, root / CODEBOOK_FILE)
    action_codec.save_stats(bundle.actions.stats, root / STATS_FILE)
    bpe.save_bpe(bundle.actions.bpe, root / BPE_FILE)
    file_writer.write_json(root / SETTINGS_FILE, {
        "chunk_size": bundle.actions.H,
        "gamma": bundle.actions.gamma,
        "clamp_low": bundle.actions.clamp_low,
        "clamp_high": bundle.actions.clamp_high,
        "relative_mode": bundle.relative_mode,
        "fit_clamp_count": bundle.actions.clamp_count,
    })
    logger.info("Saved codec bundle to %s", root)
    return root


def load_bundle(root: Path, file_writer: FileWriter) -> CodecBundle:
    for name in BUNDLE_FILES:
        if not (root / name).exists():
            raise ArtifactNotFoundError("codec file not found", root / name)
    settings = file_writer.read_json(root / SETTINGS_FILE)
    try:
        vocab = vocab_io.load_vocab(root / VOCAB_FILE)
        codebook = vision_codec.load_codebook(root / CODEBOOK_FILE)
        stats = action_codec.load_stats(root / STATS_FILE)
        model = bpe.load_bpe(root / BPE_FILE)
    except CorruptStreamError as e:
        raise DataError(str(e), root)
    try:
        tokenizer = ActionTokenizer(
            vocab=vocab, stats=stats, bpe=model,
            H=int(settings["chunk_size"]), gamma=float(settings["gamma"]),
            clamp_low=int(settings["clamp_low"]),
            clamp_high=int(settings["clamp_high"]),
        )
        mode = str(settings["relative_mode"])
    except KeyError as e:
        raise DataError(f"codec settings lack {e}", root / SETTINGS_FILE)
    return CodecBundle(vocab=vocab, codebook=codebook, actions=tokenizer,
                       relative_mode=mode)
