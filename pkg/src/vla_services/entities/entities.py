"""
Domain entities for the unified vision-language-action toolkit.

Every modality ends up as integer IDs in one shared vocabulary, so most of
these types are thin, validated containers around numpy arrays and ID lists.
"""
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidArgumentError


class Modality(str, Enum):
    TEXT = "text"
    VISION = "vision"
    ACTION = "action"
    SPECIAL = "special"


class SpecialToken(str, Enum):
    """Special tokens, declared in the order of their fixed IDs 0..6."""
    BOS = "BOS"
    EOS = "EOS"
    PAD = "PAD"
    BOI = "BOI"
    EOI = "EOI"
    BOA = "BOA"
    EOA = "EOA"


class Strategy(str, Enum):
    """Sequence strategies: the four post-training rows plus policy."""
    WORLD_MODEL = "world_model"
    VIDEO = "video"
    T2I = "t2i"
    ACTION_PRED = "action_pred"
    POLICY = "policy"

    @property
    def supervised_modality(self) -> Modality:
        if self in (Strategy.ACTION_PRED, Strategy.POLICY):
            return Modality.ACTION
        return Modality.VISION


class TaskKind(str, Enum):
    PICK_PLACE = "pick_place"
    LONG_HORIZON = "long_horizon"


@dataclass(frozen=True)
class Vocabulary:
    """Partitioned token-ID space; `text_words` holds text surface forms."""
    text_range: range
    vision_range: range
    action_range: range
    specials: Mapping[SpecialToken, int]
    text_words: Tuple[str, ...] = ()

    def __post_init__(self):
        intervals = [self.text_range, self.vision_range, self.action_range]
        intervals += [range(i, i + 1) for i in self.specials.values()]
        intervals = sorted(intervals, key=lambda r: r.start)
        for left, right in zip(intervals, intervals[1:]):
            if left.stop > right.start:
                raise InvalidArgumentError(
                    f"Vocabulary ranges overlap: {left} and {right}"
                )
        if self.action_range.stop != self.total_size:
            raise InvalidArgumentError(
                "action_range must occupy the final IDs of the vocabulary"
            )

    @property
    def total_size(self) -> int:
        return (len(self.text_range) + len(self.vision_range)
                + len(self.action_range) + len(self.specials))

    def special(self, token: SpecialToken) -> int:
        return self.specials[token]

    @property
    def bos(self) -> int:
        return self.specials[SpecialToken.BOS]

    @property
    def eos(self) -> int:
        return self.specials[SpecialToken.EOS]

    @property
    def pad(self) -> int:
        return self.specials[SpecialToken.PAD]

    @property
    def boi(self) -> int:
        return self.specials[SpecialToken.BOI]

    @property
    def eoi(self) -> int:
        return self.specials[SpecialToken.EOI]

    @property
    def boa(self) -> int:
        return self.specials[SpecialToken.BOA]

    @property
    def eoa(self) -> int:
        return self.specials[SpecialToken.EOA]


@dataclass(frozen=True)
class ActionChunk:
    """An H x d window of continuous actions."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise InvalidArgumentError(
                f"ActionChunk must be a non-empty H x d matrix, "
                f"got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("ActionChunk contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def H(self) -> int:
        return int(self.values.shape[0])

    @property
    def d(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class NormalizationStats:
    """Per-dimension 1st / 99th percentiles."""
    p1: np.ndarray
    p99: np.ndarray

    def __post_init__(self):
        p1 = np.asarray(self.p1, dtype=np.float64).reshape(-1)
        p99 = np.asarray(self.p99, dtype=np.float64).reshape(-1)
        if p1.shape != p99.shape:
            raise InvalidArgumentError("p1 and p99 must have the same length")
        if np.any(p1 > p99):
            raise InvalidArgumentError("p1 must not exceed p99")
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "p99", p99)

    @property
    def d(self) -> int:
        return int(self.p1.shape[0])


@dataclass(frozen=True)
class BpeModel:
    """
    Byte-pair model over integer DCT coefficient symbols.

    Token index i < len(base_alphabet) stands for base_alphabet[i]; index
    len(base_alphabet) + m stands for the m-th merge, whose pair is given
    in token indices.
    """
    base_alphabet: Tuple[int, ...]
    merges: Tuple[Tuple[int, int], ...] = ()

    @property
    def vocab_size(self) -> int:
        return len(self.base_alphabet) + len(self.merges)

    @cached_property
    def symbol_index(self) -> Dict[int, int]:
        return {sym: i for i, sym in enumerate(self.base_alphabet)}

    @cached_property
    def merge_ranks(self) -> Dict[Tuple[int, int], int]:
        return {pair: rank for rank, pair in enumerate(self.merges)}

    @cached_property
    def expansions(self) -> Tuple[Tuple[int, ...], ...]:
        """Base-symbol expansion of every token index."""
        table: List[Tuple[int, ...]] = [(s,) for s in self.base_alphabet]
        for left, right in self.merges:
            table.append(table[left] + table[right])
        return tuple(table)


@dataclass(frozen=True)
class VQCodebook:
    """K centroids over flattened 8x8x3 patches."""
    centroids: np.ndarray
    patch_size: int = 8
    channels: int = 3

    def __post_init__(self):
        centroids = np.asarray(self.centroids, dtype=np.float64)
        if centroids.ndim != 2 or centroids.shape[0] < 1:
            raise InvalidArgumentError("codebook needs at least one centroid")
        if centroids.shape[1] != self.patch_dim:
            raise InvalidArgumentError(
                f"centroid length {centroids.shape[1]} != {self.patch_dim}"
            )
        if not np.all(np.isfinite(centroids)):
            raise InvalidArgumentError("codebook contains non-finite entries")
        object.__setattr__(self, "centroids", centroids)

    @property
    def K(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


@dataclass(frozen=True)
class Span:
    """A run of same-modality tokens inside a packed sequence."""
    modality: Modality
    start: int
    end: int
    timestep: int

    def __len__(self) -> int:
        return self.end - self.start


@dataclass
class TokenSequence:
    """Flat IDs, a target mask, and modality spans.

    `vision_mask` is only populated by builders asked to also supervise
    future frames (joint visual + action fine-tuning).
    """
    ids: List[int]
    mask: List[bool]
    spans: List[Span] = field(default_factory=list)
    vision_mask: Optional[List[bool]] = None

    def __post_init__(self):
        if len(self.ids) != len(self.mask):
            raise InvalidArgumentError(
                f"ids ({len(self.ids)}) and mask ({len(self.mask)}) differ"
            )
        if self.vision_mask is not None and (
                len(self.vision_mask) != len(self.ids)):
            raise InvalidArgumentError("vision_mask length mismatch")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def masked_count(self) -> int:
        return int(sum(self.mask))

    @property
    def masked_positions(self) -> List[int]:
        return [i for i, m in enumerate(self.mask) if m]


@dataclass(frozen=True)
class HistoryConfig:
    """Current frame plus `history` past frames spaced `stride` steps."""
    current: int = 1
    history: int = 0
    stride: int = 1

    def __post_init__(self):
        if self.current != 1:
            raise InvalidArgumentError("exactly one current frame is supported")
        if self.history < 0 or self.stride < 1:
            raise InvalidArgumentError(
                f"invalid history window {self.history} / stride {self.stride}"
            )

    @property
    def label(self) -> str:
        return f"{self.current}+{self.history}"

    @classmethod
    def parse(cls, text: str, stride: int = 1) -> "HistoryConfig":
        """Parse '1+1' style labels."""
        try:
            current, history = (int(p) for p in text.split("+"))
        except ValueError:
            raise InvalidArgumentError(f"bad history label: {text!r}")
        return cls(current=current, history=history, stride=stride)

    def retained_indices(self, current_index: int) -> List[int]:
        """Step indices kept for a window ending at `current_index`."""
        indices = [current_index - k * self.stride
                   for k in range(self.history, -1, -1)]
        return [i for i in indices if i >= 0]


@dataclass(frozen=True)
class Block:
    position: Tuple[float, float]
    color: str
    held: bool = False


@dataclass(frozen=True)
class Goal:
    position: Tuple[float, float]
    color: str


@dataclass(frozen=True)
class EnvState:
    """
    Full state of the block arena.

    `grip` is the last non-zero grip command and `hold_steps` counts the
    close commands issued since the current block was picked up. Placement randomness is consumed at reset,
    so the seed is the only RNG state kept.
    """
    agent: Tuple[float, float]
    blocks: Tuple[Block, ...]
    goals: Tuple[Goal, ...]
    subgoals: Tuple[Tuple[str, str], ...]
    task: TaskKind
    seed: int
    grip: float = 0.0
    hold_steps: int = 0
    subgoal_index: int = 0
    step_count: int = 0

    @property
    def held_index(self) -> Optional[int]:
        for i, block in enumerate(self.blocks):
            if block.held:
                return i
        return None

    @property
    def pose(self) -> np.ndarray:
        """Absolute action-space pose (x, y, grip)."""
        return np.array([self.agent[0], self.agent[1], self.grip])

    @property
    def success(self) -> bool:
        return self.subgoal_index >= len(self.subgoals)


@dataclass
class Episode:
    """One demonstration: frames are uint8 RGB, actions are (dx, dy, grip)."""
    instruction: str
    frames: np.ndarray
    actions: np.ndarray
    success: bool
    task: TaskKind
    seed: int
    episode_id: int = 0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.uint8)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.actions.ndim != 2:
            raise InvalidArgumentError("actions must be a T x d matrix")
        if len(self.frames) != len(self.actions) + 1:
            raise InvalidArgumentError(
                f"|frames| ({len(self.frames)}) must equal "
                f"|actions| + 1 ({len(self.actions) + 1})"
            )

    @property
    def length(self) -> int:
        return len(self.frames)

    def strip_actions(self) -> "VideoClip":
        return VideoClip(
            instruction=self.instruction,
            frames=self.frames,
            episode_id=self.episode_id,
        )


@dataclass(frozen=True)
class VideoClip:
    """Action-free view of an episode, the only input of vision strategies."""
    instruction: str
    frames: np.ndarray
    episode_id: int = 0


def as_int_list(values: Sequence[int]) -> List[int]:
    return [int(v) for v in values]
