"""
Closed-loop controllers for the block arena.

Every policy plans a short list of env actions from the current state and
is told about each state the environment actually reaches.
"""
import logging
from abc import ABC, abstractmethod
from typing import List, Optional, Sequence

import numpy as np

from ..entities import (
    ContextOverflowError,
    CorruptStreamError,
    EnvState,
    HistoryConfig,
    InvalidArgumentError,
    MalformedGenerationError,
    RolloutConfig,
    SequenceTooLongError,
)
from ..utils.seeding import derive_seed
from . import ar_model, sim_env
from .action_codec import to_absolute
from .bpe import bpe_decode
from .codec_bundle import CodecBundle
from .sequence_builder import SequenceBuilder

logger = logging.getLogger(__name__)


class ControlPolicy(ABC):
    """Anything that can drive the arena one planned action list at a time."""

    name = "policy"

    def reset(self, instruction: str, state: EnvState):
        pass

    def observe(self, state: EnvState):
        pass

    @abstractmethod
    def plan(self, state: EnvState) -> np.ndarray:
        """Return a k x 3 array of env actions, k >= 1."""


class ExpertPolicy(ControlPolicy):
    """The scripted expert that generated the demonstrations."""

    name = "expert"

    def plan(self, state: EnvState) -> np.ndarray:
        return sim_env.scripted_expert(state)[None, :]


class RandomPolicy(ControlPolicy):
    """Uniform actions within bounds; the floor any learned policy must clear."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    def reset(self, instruction: str, state: EnvState):
        self._rng = np.random.default_rng(derive_seed(self.seed, state.seed))

    def plan(self, state: EnvState) -> np.ndarray:
        move = self._rng.uniform(-sim_env.MAX_DELTA, sim_env.MAX_DELTA, 2)
        grip = self._rng.uniform(-1.0, 1.0)
        return np.array([[move[0], move[1], grip]])


def binarize_grip(values: np.ndarray, deadband: float) -> np.ndarray:
    """Snap grip commands to {-1, 0, 1}."""
    values = np.asarray(values, dtype=np.float64)
    return np.where(values > deadband, 1.0,
                    np.where(values < -deadband, -1.0, 0.0))


class TokenPolicy(ControlPolicy):
    """
    Drives the arena with a trained token model.

    Each plan renders the current state, packs the history window into a
    prompt ending in BOA, generates until the block closes and decodes the
    chunk. History action blocks are re-encoded from the poses actually
    reached, so the prompt always describes what happened rather than what
    was predicted.
    """

    name = "model"

    def __init__(self, model: ar_model.VlaTransformer, bundle: CodecBundle,
                 cfg: RolloutConfig):
        if cfg.chunk_size != bundle.chunk_size:
            raise InvalidArgumentError(
                f"rollout chunk size {cfg.chunk_size} does not match the "
                f"action codec ({bundle.chunk_size})"
            )
        max_expansion = bundle.chunk_size * bundle.actions.d
        if cfg.token_budget < max_expansion:
            raise InvalidArgumentError(
                f"token budget {cfg.token_budget} is below the largest "
                f"possible action block ({max_expansion})"
            )
        self.model = model
        self.bundle = bundle
        self.cfg = cfg
        self.builder = SequenceBuilder(bundle.vocab, model.cfg.max_seq_len)
        self.instruction: List[int] = []
        self.grids: List[np.ndarray] = []
        self.poses: List[np.ndarray] = []
        self.last_tokens: List[int] = []
        self.last_targets: Optional[np.ndarray] = None
        self.token_counts: List[int] = []
        self._env_seed = 0

    @property
    def history(self) -> HistoryConfig:
        return self.cfg.history

    def reset(self, instruction: str, state: EnvState):
        self.instruction = self.bundle.encode_instruction(instruction)
        self.grids, self.poses, self.token_counts = [], [], []
        self.last_tokens, self.last_targets = [], None
        self._env_seed = state.seed
        self.observe(state)

    def observe(self, state: EnvState):
        self.grids.append(self.bundle.encode_frame(sim_env.render(state)))
        self.poses.append(state.pose)

    def prompt(self) -> List[int]:
        t = len(self.grids) - 1
        poses = np.stack(self.poses)
        steps = []
        retained = set(self.history.retained_indices(t))
        for s in range(t + 1):
            tokens = None
            if s in retained and s < t:
                tokens = self.bundle.chunk_tokens(
                    poses, s, min(s + self.bundle.chunk_size, t)
                )
            steps.append((self.grids[s], tokens))
        return self.builder.policy_prompt(self.instruction, steps,
                                          self.history)

    def block_closed(self, emitted: Sequence[int]) -> bool:
        """
        True once `emitted` cannot grow into a longer action block.

        Brackets are never loss targets, so a block also closes as soon as
        its BPE expansion covers a whole H x d chunk.
        """
        if not emitted:
            return False
        action_range = self.bundle.vocab.action_range
        if any(tok not in action_range for tok in emitted):
            return True
        codec = self.bundle.actions
        try:
            symbols = bpe_decode([tok - action_range.start for tok in emitted],
                                 codec.bpe)
        except CorruptStreamError:
            return True
        return len(symbols) >= codec.H * codec.d

    def generate_block(self) -> List[int]:
        """Action tokens after the prompt's BOA, up to EOA or a full chunk."""
        vocab = self.bundle.vocab
        try:
            prefix = self.prompt()
        except SequenceTooLongError as e:
            raise ContextOverflowError(str(e))
        t = len(self.grids) - 1
        output = ar_model.generate(
            self.model, prefix, stop=[vocab.eoa],
            max_new=self.cfg.token_budget + 1, mode=self.cfg.decoding,
            top_k=self.cfg.top_k,
            seed=derive_seed(self.cfg.seed, self._env_seed, t),
            until=self.block_closed,
        )
        emitted = output[len(prefix):]
        if not self.block_closed(emitted):
            raise ContextOverflowError(
                f"action block not closed within a budget of "
                f"{self.cfg.token_budget} tokens"
            )
        block = emitted[:-1] if emitted[-1] == vocab.eoa else emitted
        stray = [tok for tok in block if tok not in vocab.action_range]
        if not block or stray:
            raise MalformedGenerationError(
                f"action block holds {len(stray)} non-action tokens"
                if stray else "empty action block"
            )
        return block

    def plan(self, state: EnvState) -> np.ndarray:
        block = self.generate_block()
        try:
            chunk = self.bundle.decode_chunk(block)
        except (CorruptStreamError, InvalidArgumentError) as e:
            raise MalformedGenerationError(f"undecodable action block: {e}")
        self.last_tokens = block
        self.token_counts.append(len(block))
        targets = to_absolute(chunk.values, state.pose,
                              self.bundle.relative_mode)
        self.last_targets = targets
        k = self.cfg.steps_per_chunk
        previous = np.vstack([state.pose[None, :], targets[:k - 1]])
        actions = targets[:k] - previous
        actions[:, 2] = binarize_grip(targets[:k, 2],
                                      self.cfg.grip_deadband)
        return actions
