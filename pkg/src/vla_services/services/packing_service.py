import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from ..core.codec_bundle import CodecBundle
from ..core.sequence_builder import SequenceBuilder, read_shard, write_shard
from ..entities import (
    Episode,
    HistoryConfig,
    InvalidArgumentError,
    Strategy,
    TokenSequence,
    VideoClip,
)
from .data_service import DataService

logger = logging.getLogger(__name__)

FOREIGN_PERMUTATION = (1, 0, 2)
FOREIGN_SIGNS = (-1.0, 1.0, -1.0)


def foreign_chunk(chunk: np.ndarray) -> np.ndarray:
    """Same motion expressed in an embodiment with swapped, flipped axes."""
    chunk = np.asarray(chunk, dtype=np.float64)
    return chunk[:, list(FOREIGN_PERMUTATION)] * np.asarray(FOREIGN_SIGNS)


@dataclass
class EncodedEpisode:
    instruction: List[int]
    grids: List[np.ndarray]
    poses: Optional[np.ndarray] = None


class PackingService:
    """
    Turns episodes into training sequences for every strategy.

    Think of it as a typesetter: the same story (episode) can be set as a
    picture book, a flip-book or an annotated manual, and only the
    highlighting (the loss mask) tells the reader what to learn.
    """

    def __init__(self, bundle: CodecBundle, max_seq_len: int = 1024,
                 mask_history_actions: bool = False):
        self.bundle = bundle
        self.builder = SequenceBuilder(bundle.vocab, max_seq_len,
                                       mask_history_actions)

    def encode_clip(self, clip: VideoClip) -> EncodedEpisode:
        return EncodedEpisode(
            instruction=self.bundle.encode_instruction(clip.instruction),
            grids=self.bundle.encode_frames(clip.frames),
        )

    def encode_episode(self, episode: Episode) -> EncodedEpisode:
        encoded = self.encode_clip(episode.strip_actions())
        encoded.poses = DataService.poses(episode)
        return encoded

    @staticmethod
    def clip_windows(length: int, clip_frames: int,
                     frame_interval: int = 1) -> List[List[int]]:
        """Frame indices of every window of up to `clip_frames` frames."""
        windows = []
        for start in range(length):
            indices = list(range(start, length, frame_interval))[:clip_frames]
            if len(indices) >= 2:
                windows.append(indices)
        return windows

    def posttrain_dataset(self, strategy: str, episodes: Sequence[Episode],
                          clip_frames: int = 6, frame_interval: int = 1,
                          foreign_action_space: bool = True
                          ) -> List[TokenSequence]:
        """
        Sequences for a post-training row.

        Vision strategies only ever see action-free clips; the action row
        reads full episodes, optionally in a foreign action space.
        """
        if strategy == "none":
            return []
        tag = Strategy(strategy)
        if tag == Strategy.ACTION_PRED:
            return self.action_pred_dataset(episodes, foreign_action_space)
        if tag == Strategy.POLICY:
            raise InvalidArgumentError("policy is not a post-training row")
        clips = DataService.strip_actions(episodes)
        return self.vision_dataset(tag, clips, clip_frames, frame_interval)

    def vision_dataset(self, strategy: Strategy, clips: Sequence[VideoClip],
                       clip_frames: int = 6,
                       frame_interval: int = 1) -> List[TokenSequence]:
        sequences = []
        for clip in clips:
            if not isinstance(clip, VideoClip):
                raise InvalidArgumentError(
                    "vision post-training consumes action-free clips only"
                )
            encoded = self.encode_clip(clip)
            if strategy == Strategy.T2I:
                for grid in encoded.grids:
                    sequences.append(self.builder.t2i(encoded.instruction,
                                                      grid))
                continue
            for window in self.clip_windows(len(encoded.grids), clip_frames,
                                            frame_interval):
                frames = [encoded.grids[i] for i in window]
                if strategy == Strategy.WORLD_MODEL:
                    sequences.append(self.builder.world_model(
                        encoded.instruction, frames))
                elif strategy == Strategy.VIDEO:
                    sequences.append(self.builder.video(frames))
                else:
                    raise InvalidArgumentError(
                        f"{strategy.value} is not a vision strategy"
                    )
        logger.info("Packed %d %s sequences from %d clips", len(sequences),
                    strategy.value, len(clips))
        return sequences

    def action_pred_dataset(self, episodes: Sequence[Episode],
                            foreign_action_space: bool = True
                            ) -> List[TokenSequence]:
        sequences = []
        H = self.bundle.chunk_size
        for episode in episodes:
            encoded = self.encode_episode(episode)
            last = len(encoded.grids) - 1
            for t in range(last):
                chunk = self.bundle.chunk(encoded.poses, t,
                                          min(t + H, last))
                if foreign_action_space:
                    chunk = foreign_chunk(chunk)
                tokens = self.bundle.actions.encode(chunk)
                sequences.append(self.builder.action_pred(
                    encoded.instruction, encoded.grids[t], tokens))
        logger.info("Packed %d action_pred sequences (foreign axes: %s)",
                    len(sequences), foreign_action_space)
        return sequences

    def policy_samples(self, encoded: EncodedEpisode, history: HistoryConfig,
                       supervise_frames: bool = False) -> List[TokenSequence]:
        """One sequence per stored step t that still has a next frame."""
        H = self.bundle.chunk_size
        last = len(encoded.grids) - 1
        samples = []
        for t in range(last):
            retained = history.retained_indices(t)
            steps = []
            for s in range(t + 1):
                tokens = None
                if s in retained:
                    stop = min(s + H, last) if s == t else min(s + H, t)
                    tokens = self.bundle.chunk_tokens(encoded.poses, s, stop)
                steps.append((encoded.grids[s], tokens))
            samples.append(self.builder.policy(
                encoded.instruction, steps, history,
                supervise_frames=supervise_frames,
            ))
        return samples

    def policy_dataset(self, episodes: Sequence[Episode],
                       history: HistoryConfig,
                       supervise_frames: bool = False) -> List[TokenSequence]:
        sequences = []
        for episode in episodes:
            sequences.extend(self.policy_samples(
                self.encode_episode(episode), history, supervise_frames))
        logger.info("Packed %d policy sequences (history %s) from %d "
                    "episodes", len(sequences), history.label, len(episodes))
        return sequences

    @staticmethod
    def write(sequences: Sequence[TokenSequence], path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        return write_shard(sequences, path)

    @staticmethod
    def read(path: Path) -> List[TokenSequence]:
        return read_shard(path)
