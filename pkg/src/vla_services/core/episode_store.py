"""
On-disk episode datasets.

A dataset directory holds ``manifest.csv`` (one row per episode) and one
binary file per episode under ``episodes/``: a fixed header, the frames as
8-bit RGB and the actions as little-endian float32.
"""
import logging
import struct
from pathlib import Path
from typing import List, Sequence

import numpy as np
import pandas as pd

from ..entities import CorruptStreamError, DataError, Episode, TaskKind
from .file_writer import FileWriter

logger = logging.getLogger(__name__)

EPISODE_MAGIC = b"VLAE"
EPISODE_VERSION = 1
EPISODE_HEADER = struct.Struct("<4sI5I")
MANIFEST = "manifest.csv"
EPISODE_DIR = "episodes"
MANIFEST_COLUMNS = ['episode_id', 'task', 'seed', 'instruction', 'length',
                    'success', 'file', 'format_version']


def _episode_file(episode_id: int) -> str:
    return f"{EPISODE_DIR}/episode_{episode_id:06d}.bin"


def encode_episode(episode: Episode) -> bytes:
    frames = np.ascontiguousarray(episode.frames, dtype=np.uint8)
    T, H, W, C = frames.shape
    d = episode.actions.shape[1]
    header = EPISODE_HEADER.pack(EPISODE_MAGIC, EPISODE_VERSION, T, H, W, C, d)
    return (header + frames.tobytes()
            + episode.actions.astype("<f4").tobytes())


def decode_episode(raw: bytes, instruction: str, task: TaskKind, seed: int,
                   success: bool, episode_id: int) -> Episode:
    try:
        magic, version, T, H, W, C, d = EPISODE_HEADER.unpack_from(raw)
    except struct.error:
        raise CorruptStreamError(f"truncated header for episode {episode_id}")
    if magic != EPISODE_MAGIC or version != EPISODE_VERSION:
        raise CorruptStreamError(
            f"unsupported episode format for episode {episode_id}"
        )
    n_pixels = T * H * W * C
    expected = EPISODE_HEADER.size + n_pixels + 4 * (T - 1) * d
    if len(raw) != expected:
        raise CorruptStreamError(
            f"episode {episode_id} has {len(raw)} bytes, expected {expected}"
        )
    frames = np.frombuffer(raw, dtype=np.uint8, count=n_pixels,
                           offset=EPISODE_HEADER.size).reshape(T, H, W, C)
    actions = np.frombuffer(raw, dtype="<f4", count=(T - 1) * d,
                            offset=EPISODE_HEADER.size + n_pixels)
    return Episode(
        instruction=instruction,
        frames=frames.copy(),
        actions=actions.astype(np.float64).reshape(T - 1, d),
        success=success,
        task=task,
        seed=seed,
        episode_id=episode_id,
    )


class EpisodeStore:
    """
    Reads and writes dataset directories.

    Think of it as a film archive: the manifest is the catalogue card index,
    and every reel (episode) sits in its own labelled can.
    """

    def __init__(self, file_writer: FileWriter):
        self.file_writer = file_writer

    def save(self, episodes: Sequence[Episode], root: Path) -> Path:
        rows = []
        for episode in episodes:
            relative = _episode_file(episode.episode_id)
            self.file_writer.write_bytes(root / relative,
                                         encode_episode(episode))
            rows.append({
                'episode_id': episode.episode_id,
                'task': episode.task.value,
                'seed': episode.seed,
                'instruction': episode.instruction,
                'length': episode.length,
                'success': bool(episode.success),
                'file': relative,
                'format_version': EPISODE_VERSION,
            })
        df = pd.DataFrame(rows, columns=MANIFEST_COLUMNS)
        self.file_writer.write_text(root / MANIFEST, df.to_csv(index=False))
        logger.info("Saved %d episodes to %s", len(rows), root)
        return root

    def read_manifest(self, root: Path) -> pd.DataFrame:
        path = root / MANIFEST
        if not path.exists():
            raise DataError("dataset manifest not found", path)
        try:
            df = pd.read_csv(path, keep_default_na=False,
                             dtype={'instruction': str, 'task': str,
                                    'file': str, 'success': str})
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise DataError(f"unreadable dataset manifest: {e}", path)
        missing = set(MANIFEST_COLUMNS) - set(df.columns)
        if missing:
            raise DataError(f"manifest lacks columns {sorted(missing)}", path)
        return df

    def load(self, root: Path) -> List[Episode]:
        df = self.read_manifest(root)
        episodes = []
        for row in df.itertuples(index=False):
            path = root / row.file
            if not path.exists():
                raise DataError("episode file not found", path)
            try:
                episode = decode_episode(
                    path.read_bytes(),
                    instruction=str(row.instruction),
                    task=TaskKind(row.task),
                    seed=int(row.seed),
                    success=row.success == 'True',
                    episode_id=int(row.episode_id),
                )
            except CorruptStreamError as e:
                raise DataError(str(e), path)
            if episode.length != int(row.length):
                raise DataError(
                    f"episode length {episode.length} disagrees with "
                    f"manifest ({row.length})", path,
                )
            episodes.append(episode)
        logger.info("Loaded %d episodes from %s", len(episodes), root)
        return episodes
