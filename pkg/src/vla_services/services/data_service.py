import logging
from pathlib import Path
from typing import List, Sequence

import numpy as np

from ..core import sim_env
from ..core.episode_store import EpisodeStore, encode_episode
from ..entities import DataConfig, Episode, InvalidArgumentError, VideoClip
from ..utils.hashing import sha256_bytes, sha256_json

logger = logging.getLogger(__name__)


class DataService:
    """
    Generates, stores and slices demonstration datasets.

    This is like the props department of a film set: it stages every scene
    (episode) from a seed, files it away, and hands out exact copies.
    """

    def __init__(self, episode_store: EpisodeStore):
        self.episode_store = episode_store

    def generate(self, cfg: DataConfig, progress: bool = False) -> List[Episode]:
        return sim_env.generate_dataset(
            cfg.n_episodes, cfg.mix, cfg.seed,
            keyframe_threshold=cfg.keyframe_threshold,
            min_frames=cfg.min_frames,
            trim_static=cfg.trim_static,
            max_episodes_per_task=cfg.max_episodes_per_task,
            progress=progress,
        )

    def make_data(self, cfg: DataConfig, out_dir: Path,
                  progress: bool = False) -> List[Episode]:
        episodes = self.generate(cfg, progress=progress)
        if not episodes:
            raise InvalidArgumentError(
                "every generated episode was filtered out"
            )
        self.episode_store.save(episodes, out_dir)
        return episodes

    def load(self, root: Path) -> List[Episode]:
        return self.episode_store.load(root)

    @staticmethod
    def subset(episodes: Sequence[Episode], fraction: float,
               seed: int) -> List[Episode]:
        """Seeded subset of round(fraction * n) episodes, in original order."""
        if not 0.0 < fraction <= 1.0:
            raise InvalidArgumentError(f"fraction {fraction} outside (0, 1]")
        if fraction == 1.0:
            return list(episodes)
        count = max(1, int(round(fraction * len(episodes))))
        rng = np.random.default_rng(seed)
        picks = np.sort(rng.choice(len(episodes), count, replace=False))
        return [episodes[int(i)] for i in picks]

    @staticmethod
    def strip_actions(episodes: Sequence[Episode]) -> List[VideoClip]:
        return [episode.strip_actions() for episode in episodes]

    @staticmethod
    def replays_exactly(episode: Episode) -> bool:
        states = sim_env.replay(episode)
        if len(states) != episode.length:
            return False
        frames = np.stack([sim_env.render(s) for s in states])
        return bool(np.array_equal(frames, episode.frames))

    @staticmethod
    def poses(episode: Episode) -> np.ndarray:
        """Absolute (x, y, grip) per stored frame, recovered by replay."""
        return sim_env.pose_trajectory(sim_env.replay(episode))

    @staticmethod
    def content_hash(episodes: Sequence[Episode]) -> str:
        """Hash of episode contents, independent of where they are stored."""
        digests = [
            {
                'instruction': e.instruction,
                'task': e.task.value,
                'seed': e.seed,
                'success': bool(e.success),
                'payload': sha256_bytes(encode_episode(e)),
            }
            for e in episodes
        ]
        return sha256_json(digests)
