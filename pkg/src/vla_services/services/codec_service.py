import logging
from pathlib import Path
from typing import List, Sequence

import numpy as np

from ..core import vision_codec
from ..core.action_codec import ActionTokenizer, chunk_between
from ..core.codec_bundle import CodecBundle, load_bundle, save_bundle
from ..core.file_writer import FileWriter
from ..core.vocab import TextTokenizer, build_vocab
from ..entities import CodecConfig, Episode, InvalidArgumentError
from .data_service import DataService

logger = logging.getLogger(__name__)


class CodecService:
    """
    Fits the vocabulary, the image codebook and the action codec on one corpus.

    Like a translator compiling a dictionary before translating anything:
    every word, picture patch and motion that appears in the corpus gets a
    fixed entry, and the dictionary is stored next to the data it came from.
    """

    def __init__(self, file_writer: FileWriter):
        self.file_writer = file_writer

    @staticmethod
    def action_corpus(episodes: Sequence[Episode], H: int,
                      mode: str) -> List[np.ndarray]:
        """One chunk per stored step of every episode."""
        chunks = []
        for episode in episodes:
            poses = DataService.poses(episode)
            last = len(poses) - 1
            for t in range(last):
                chunks.append(chunk_between(poses, t, min(t + H, last), H,
                                            mode))
        return chunks

    def fit(self, episodes: Sequence[Episode], cfg: CodecConfig) -> CodecBundle:
        if not episodes:
            raise InvalidArgumentError("cannot fit codecs on no episodes")
        words = TextTokenizer.words_of(e.instruction for e in episodes)
        vocab = build_vocab(cfg.text_size, cfg.codebook_size,
                            cfg.action_size, text_words=words)
        frames = [frame for e in episodes for frame in e.frames]
        codebook = vision_codec.fit_codebook(
            frames, cfg.codebook_size, seed=cfg.seed,
            iterations=cfg.kmeans_iters,
        )
        corpus = self.action_corpus(episodes, cfg.chunk_size,
                                    cfg.relative_mode)
        actions = ActionTokenizer.fit(
            vocab, corpus, cfg.bpe_vocab, gamma=cfg.gamma,
            clamp_low=cfg.clamp_low, clamp_high=cfg.clamp_high,
        )
        logger.info(
            "Codecs fitted: vocab %d, codebook %d, %d BPE merges",
            vocab.total_size, codebook.K, len(actions.bpe.merges),
        )
        return CodecBundle(vocab=vocab, codebook=codebook, actions=actions,
                           relative_mode=cfg.relative_mode)

    def save(self, bundle: CodecBundle, out_dir: Path) -> Path:
        return save_bundle(bundle, out_dir, self.file_writer)

    def load(self, root: Path) -> CodecBundle:
        return load_bundle(root, self.file_writer)
