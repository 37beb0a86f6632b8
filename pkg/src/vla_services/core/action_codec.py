"""
Frequency-domain action tokenizer.

Pipeline: normalize -> DCT along time -> quantize -> clamp -> flatten ->
BPE -> offset into the vocabulary's action range. Decoding walks the same
stages backwards.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from scipy.fft import dct, idct

from ..entities import (
    ActionChunk,
    BpeModel,
    CorruptStreamError,
    DataError,
    InvalidArgumentError,
    NormalizationStats,
    Vocabulary,
)
from .bpe import bpe_decode, bpe_encode, fit_bpe

logger = logging.getLogger(__name__)

STATS_TAG = "vla-action-stats"
STATS_VERSION = 1


def _as_matrix(values) -> np.ndarray:
    if isinstance(values, ActionChunk):
        return values.values
    matrix = np.asarray(values, dtype=np.float64)
    if matrix.ndim != 2:
        raise InvalidArgumentError(f"expected a 2-D matrix, got {matrix.shape}")
    return matrix


def to_relative(absolute, mode: str = "consecutive") -> np.ndarray:
    """Consecutive differences, or offsets from the first row."""
    matrix = _as_matrix(absolute)
    if mode == "consecutive":
        if matrix.shape[0] < 2:
            raise InvalidArgumentError(
                "consecutive mode needs at least two rows"
            )
        return np.diff(matrix, axis=0)
    if mode == "first_frame":
        return matrix - matrix[0]
    raise InvalidArgumentError(f"unknown relative mode {mode!r}")


def chunk_between(poses, start: int, stop: int, H: int,
                  mode: str = "consecutive") -> np.ndarray:
    """
    Relative H x d chunk for the motion from pose `start` to pose `stop`.

    Fewer than H transitions are padded by holding the last pose, which
    appends zero deltas in consecutive mode.
    """
    poses = _as_matrix(poses)
    if not 0 <= start <= stop < len(poses):
        raise InvalidArgumentError(
            f"pose window [{start}, {stop}] outside {len(poses)} poses"
        )
    window = poses[start:min(stop, start + H) + 1]
    if len(window) < H + 1:
        padding = np.repeat(window[-1:], H + 1 - len(window), axis=0)
        window = np.concatenate([window, padding], axis=0)
    relative = to_relative(window, mode)
    return relative[-H:]


def to_absolute(chunk, pose, mode: str = "consecutive") -> np.ndarray:
    """Absolute poses reached by applying a relative chunk from `pose`."""
    matrix = _as_matrix(chunk)
    pose = np.asarray(pose, dtype=np.float64).reshape(1, -1)
    if mode == "consecutive":
        return pose + np.cumsum(matrix, axis=0)
    if mode == "first_frame":
        return pose + matrix
    raise InvalidArgumentError(f"unknown relative mode {mode!r}")


def fit_normalizer(corpus: Sequence[ActionChunk]) -> NormalizationStats:
    if len(corpus) == 0:
        raise InvalidArgumentError("cannot fit a normalizer on no chunks")
    dims = {_as_matrix(c).shape[1] for c in corpus}
    if len(dims) != 1:
        raise InvalidArgumentError(f"chunks disagree on d: {sorted(dims)}")
    pooled = np.concatenate([_as_matrix(c) for c in corpus], axis=0)
    p1, p99 = np.percentile(pooled, [1, 99], axis=0, method="linear")
    return NormalizationStats(p1=p1, p99=p99)


def _check_dims(matrix: np.ndarray, stats: NormalizationStats):
    if matrix.shape[1] != stats.d:
        raise InvalidArgumentError(
            f"chunk has d={matrix.shape[1]} but stats have d={stats.d}"
        )


def normalize(chunk, stats: NormalizationStats) -> np.ndarray:
    matrix = _as_matrix(chunk)
    _check_dims(matrix, stats)
    span = stats.p99 - stats.p1
    constant = span == 0
    safe = np.where(constant, 1.0, span)
    scaled = 2.0 * (matrix - stats.p1) / safe - 1.0
    scaled = np.where(constant, 0.0, scaled)
    return np.clip(scaled, -1.0, 1.0)


def denormalize(chunk, stats: NormalizationStats) -> np.ndarray:
    matrix = _as_matrix(chunk)
    _check_dims(matrix, stats)
    return (matrix + 1.0) / 2.0 * (stats.p99 - stats.p1) + stats.p1


def dct_forward(chunk) -> np.ndarray:
    matrix = _as_matrix(chunk)
    if not np.all(np.isfinite(matrix)):
        raise InvalidArgumentError("DCT input contains non-finite values")
    return dct(matrix, type=2, norm="ortho", axis=0)


def dct_inverse(coeffs) -> np.ndarray:
    matrix = _as_matrix(coeffs)
    if not np.all(np.isfinite(matrix)):
        raise InvalidArgumentError("DCT input contains non-finite values")
    return idct(matrix, type=2, norm="ortho", axis=0)


def quantize(coeffs, gamma: float) -> np.ndarray:
    """Round half away from zero after scaling by gamma."""
    if gamma <= 0:
        raise InvalidArgumentError(f"gamma must be > 0, got {gamma}")
    scaled = gamma * np.asarray(coeffs, dtype=np.float64)
    return (np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)).astype(np.int64)


def dequantize(ints, gamma: float) -> np.ndarray:
    if gamma <= 0:
        raise InvalidArgumentError(f"gamma must be > 0, got {gamma}")
    return np.asarray(ints, dtype=np.float64) / gamma


def clamp(ints, low: int, high: int) -> Tuple[np.ndarray, int]:
    """Clip coefficients to [low, high] and report how many moved."""
    ints = np.asarray(ints, dtype=np.int64)
    clipped = np.clip(ints, low, high)
    return clipped, int(np.count_nonzero(clipped != ints))


def flatten(ints) -> List[int]:
    """Frequency-major, dimension-minor."""
    matrix = np.asarray(ints)
    if matrix.ndim != 2 or matrix.size == 0:
        raise InvalidArgumentError("cannot flatten an empty chunk")
    return [int(v) for v in matrix.reshape(-1)]


def unflatten(values: Sequence[int], H: int, d: int) -> np.ndarray:
    if len(values) != H * d:
        raise CorruptStreamError(
            f"{len(values)} coefficients cannot fill a {H}x{d} chunk"
        )
    return np.asarray(values, dtype=np.int64).reshape(H, d)


@dataclass
class ActionTokenizer:
    """
    Fitted action codec bound to a vocabulary.

    The BPE alphabet is exactly the clamp range, so every clamped
    coefficient has a base token. The clamp counter accumulates over the
    tokenizer's lifetime and is reported as a data-quality metric.
    """
    vocab: Vocabulary
    stats: NormalizationStats
    bpe: BpeModel
    H: int
    gamma: float = 128.0
    clamp_low: int = -512
    clamp_high: int = 511
    clamp_count: int = 0

    def __post_init__(self):
        if self.bpe.vocab_size > len(self.vocab.action_range):
            raise InvalidArgumentError(
                f"BPE vocabulary ({self.bpe.vocab_size}) exceeds the action "
                f"range ({len(self.vocab.action_range)})"
            )
        alphabet = (self.bpe.base_alphabet[0], self.bpe.base_alphabet[-1])
        if alphabet != (self.clamp_low, self.clamp_high):
            raise InvalidArgumentError(
                f"BPE alphabet {list(alphabet)} differs from the clamp range "
                f"[{self.clamp_low}, {self.clamp_high}]"
            )

    @property
    def d(self) -> int:
        return self.stats.d

    def coefficients(self, chunk) -> np.ndarray:
        """Integer coefficients before clamping."""
        return quantize(dct_forward(normalize(chunk, self.stats)), self.gamma)

    def encode(self, chunk) -> List[int]:
        matrix = _as_matrix(chunk)
        if matrix.shape != (self.H, self.d):
            raise InvalidArgumentError(
                f"expected a {self.H}x{self.d} chunk, got {matrix.shape}"
            )
        ints, clamped = clamp(self.coefficients(matrix),
                              self.clamp_low, self.clamp_high)
        self.clamp_count += clamped
        start = self.vocab.action_range.start
        return [start + t for t in bpe_encode(flatten(ints), self.bpe)]

    def decode(self, tokens: Sequence[int]) -> ActionChunk:
        action_range = self.vocab.action_range
        outside = [t for t in tokens if t not in action_range]
        if outside:
            raise InvalidArgumentError(
                f"tokens outside the action range: {outside[:5]}"
            )
        symbols = bpe_decode([t - action_range.start for t in tokens],
                             self.bpe)
        ints = unflatten(symbols, self.H, self.d)
        coeffs = dequantize(ints, self.gamma)
        return ActionChunk(denormalize(dct_inverse(coeffs), self.stats))

    @classmethod
    def fit(cls, vocab: Vocabulary, corpus: Sequence[ActionChunk],
            target: int, gamma: float = 128.0, clamp_low: int = -512,
            clamp_high: int = 511) -> "ActionTokenizer":
        """Fit normalizer then BPE on the same chunk corpus."""
        if len(corpus) == 0:
            raise InvalidArgumentError("cannot fit on an empty chunk corpus")
        stats = fit_normalizer(corpus)
        H = _as_matrix(corpus[0]).shape[0]
        sequences = []
        clamped_total = 0
        for chunk in corpus:
            ints = quantize(dct_forward(normalize(chunk, stats)), gamma)
            ints, clamped = clamp(ints, clamp_low, clamp_high)
            clamped_total += clamped
            sequences.append(flatten(ints))
        bpe = fit_bpe(sequences, target, alphabet=(clamp_low, clamp_high))
        logger.info(
            "Fitted action codec on %d chunks (H=%d, d=%d, gamma=%s); "
            "%d coefficients clamped",
            len(corpus), H, stats.d, gamma, clamped_total,
        )
        return cls(vocab=vocab, stats=stats, bpe=bpe, H=H, gamma=gamma,
                   clamp_low=clamp_low, clamp_high=clamp_high,
                   clamp_count=clamped_total)


def encode(chunk, stats: NormalizationStats, gamma: float, bpe: BpeModel,
           vocab: Vocabulary) -> List[int]:
    matrix = _as_matrix(chunk)
    codec = ActionTokenizer(vocab=vocab, stats=stats, bpe=bpe,
                            H=matrix.shape[0], gamma=gamma,
                            clamp_low=bpe.base_alphabet[0],
                            clamp_high=bpe.base_alphabet[-1])
    return codec.encode(matrix)


def decode(tokens: Sequence[int], stats: NormalizationStats, gamma: float,
           bpe: BpeModel, vocab: Vocabulary, H: int, d: int) -> ActionChunk:
    if d != stats.d:
        raise InvalidArgumentError(f"d={d} does not match stats d={stats.d}")
    codec = ActionTokenizer(vocab=vocab, stats=stats, bpe=bpe, H=H,
                            gamma=gamma, clamp_low=bpe.base_alphabet[0],
                            clamp_high=bpe.base_alphabet[-1])
    return codec.decode(tokens)


def save_stats(stats: NormalizationStats, path: Path) -> Path:
    lines = [f"{STATS_TAG} v{STATS_VERSION}"]
    lines += [f"{float(lo)!r} {float(hi)!r}"
              for lo, hi in zip(stats.p1, stats.p99)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_stats(path: Path) -> NormalizationStats:
    if not path.exists():
        raise DataError("action statistics file not found", path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != f"{STATS_TAG} v{STATS_VERSION}":
        raise CorruptStreamError(f"unsupported stats header in {path}")
    try:
        rows = [tuple(float(v) for v in line.split()) for line in lines[1:]]
        p1, p99 = zip(*rows)
    except ValueError:
        raise CorruptStreamError(f"malformed stats file {path}")
    return NormalizationStats(p1=np.array(p1), p99=np.array(p99))
