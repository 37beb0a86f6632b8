"""
Patch-level vector quantization with spatial compression factor 8.

Every non-overlapping 8x8x3 patch is replaced by the index of its nearest
codebook centroid; the codebook is fitted with k-means over the distinct
patches of a training corpus.
"""
import logging
import struct
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.spatial.distance import cdist

from ..entities import (
    CorruptStreamError,
    DataError,
    InvalidArgumentError,
    Vocabulary,
    VQCodebook,
)

logger = logging.getLogger(__name__)

PATCH = 8
CHANNELS = 3
MAGIC = b"VQCB"
VERSION = 1
HEADER = struct.Struct("<4sIII")


def to_float_image(image) -> np.ndarray:
    """uint8 frames map to [0, 1]; float input is taken as already scaled."""
    array = np.asarray(image)
    if array.dtype == np.uint8:
        return array.astype(np.float64) / 255.0
    return array.astype(np.float64)


def _check_image(image: np.ndarray):
    if image.ndim != 3 or image.shape[2] != CHANNELS:
        raise InvalidArgumentError(
            f"expected an Hp x Wp x 3 image, got shape {image.shape}"
        )
    if image.shape[0] % PATCH or image.shape[1] % PATCH:
        raise InvalidArgumentError(
            f"image size {image.shape[:2]} is not divisible by {PATCH}"
        )


def _patch_rows(image: np.ndarray) -> np.ndarray:
    _check_image(image)
    n_h, n_w = image.shape[0] // PATCH, image.shape[1] // PATCH
    patches = image.reshape(n_h, PATCH, n_w, PATCH, CHANNELS)
    patches = patches.transpose(0, 2, 1, 3, 4)
    return patches.reshape(n_h * n_w, PATCH * PATCH * CHANNELS)


def extract_patches(image) -> np.ndarray:
    """Row-major patches, each flattened to 192 values."""
    return _patch_rows(to_float_image(image))


def assemble_patches(patches: np.ndarray, n_h: int, n_w: int) -> np.ndarray:
    blocks = patches.reshape(n_h, n_w, PATCH, PATCH, CHANNELS)
    return blocks.transpose(0, 2, 1, 3, 4).reshape(
        n_h * PATCH, n_w * PATCH, CHANNELS
    )


def nearest_centroid(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the closest centroid; ties go to the lowest index."""
    distances = cdist(points, centroids, metric="sqeuclidean")
    return np.argmin(distances, axis=1)


def kmeans_plus_plus(points: np.ndarray, weights: np.ndarray, K: int,
                     rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.choice(n, p=weights / weights.sum()))]
    closest = cdist(points, points[chosen], metric="sqeuclidean")[:, 0]
    for _ in range(1, K):
        scores = closest * weights
        total = scores.sum()
        if total <= 0:
            remaining = np.setdiff1d(np.arange(n), chosen)
            index = int(remaining[0])
        else:
            index = int(rng.choice(n, p=scores / total))
        chosen.append(index)
        new = cdist(points, points[[index]], metric="sqeuclidean")[:, 0]
        closest = np.minimum(closest, new)
    return points[chosen].copy()


def lloyd(points: np.ndarray, weights: np.ndarray, centroids: np.ndarray,
          iterations: int) -> np.ndarray:
    """Weighted Lloyd updates; an empty cluster keeps its centroid."""
    centroids = centroids.astype(np.float64).copy()
    K = len(centroids)
    for _ in range(iterations):
        labels = nearest_centroid(points, centroids)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, points * weights[:, None])
        totals = np.bincount(labels, weights=weights, minlength=K)
        filled = totals > 0
        centroids[filled] = sums[filled] / totals[filled, None]
    return centroids


def fit_codebook(images: Iterable, K: int, seed: int = 0,
                 iterations: int = 25) -> VQCodebook:
    """k-means++ seeded init, then a fixed number of Lloyd iterations."""
    if K < 1:
        raise InvalidArgumentError(f"codebook size must be >= 1, got {K}")
    stacks = [_patch_rows(np.asarray(img)) for img in images]
    if not stacks:
        raise InvalidArgumentError("cannot fit a codebook on no images")
    if len({s.dtype for s in stacks}) > 1:
        stacks = [to_float_image(s) for s in stacks]
    points, counts = np.unique(np.concatenate(stacks, axis=0), axis=0,
                               return_counts=True)
    points = to_float_image(points)
    if len(points) < K:
        raise InvalidArgumentError(
            f"only {len(points)} distinct patches for a codebook of {K}"
        )
    weights = counts.astype(np.float64)
    rng = np.random.default_rng(seed)
    initial = kmeans_plus_plus(points, weights, K, rng)
    centroids = lloyd(points, weights, initial, iterations)
    centroids = centroids.astype(np.float32).astype(np.float64)
    residual = np.min(cdist(points, centroids, metric="sqeuclidean"), axis=1)
    logger.info(
        "Fitted %d-entry codebook on %d distinct patches, weighted MSE %.6f",
        K, len(points), float(np.sum(residual * weights) / weights.sum()
                              / points.shape[1]),
    )
    return VQCodebook(centroids=centroids)


class ImageTokenizer(ABC):
    """Anything that turns an image into a grid of vision token IDs."""

    @abstractmethod
    def encode(self, image) -> np.ndarray:
        pass

    @abstractmethod
    def decode(self, grid) -> np.ndarray:
        pass

    def tokens_per_image(self, height: int, width: int) -> int:
        return (height // PATCH) * (width // PATCH)


class PatchVQTokenizer(ImageTokenizer):
    def __init__(self, codebook: VQCodebook, vocab: Vocabulary):
        if codebook.K > len(vocab.vision_range):
            raise InvalidArgumentError(
                f"codebook of {codebook.K} exceeds the vision range "
                f"({len(vocab.vision_range)})"
            )
        self.codebook = codebook
        self.vocab = vocab

    def encode(self, image) -> np.ndarray:
        image = to_float_image(image)
        _check_image(image)
        n_h, n_w = image.shape[0] // PATCH, image.shape[1] // PATCH
        labels = nearest_centroid(extract_patches(image),
                                  self.codebook.centroids)
        return (labels + self.vocab.vision_range.start).reshape(n_h, n_w)

    def decode(self, grid) -> np.ndarray:
        grid = np.asarray(grid, dtype=np.int64)
        if grid.ndim != 2:
            raise InvalidArgumentError("token grid must be 2-D")
        indices = grid - self.vocab.vision_range.start
        if np.any(indices < 0) or np.any(indices >= self.codebook.K):
            raise InvalidArgumentError(
                "grid holds IDs outside the fitted vision codebook"
            )
        patches = self.codebook.centroids[indices.reshape(-1)]
        image = assemble_patches(patches, grid.shape[0], grid.shape[1])
        return np.clip(image, 0.0, 1.0)


def encode_image(image, codebook: VQCodebook,
                 vocab: Vocabulary) -> np.ndarray:
    return PatchVQTokenizer(codebook, vocab).encode(image)


def decode_image(grid, codebook: VQCodebook,
                 vocab: Vocabulary) -> np.ndarray:
    return PatchVQTokenizer(codebook, vocab).decode(grid)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_codebook(codebook: VQCodebook, path: Path) -> Path:
    header = HEADER.pack(MAGIC, VERSION, codebook.K, codebook.patch_dim)
    payload = codebook.centroids.astype("<f4").tobytes()
    path.write_bytes(header + payload)
    return path


def load_codebook(path: Path) -> VQCodebook:
    if not path.exists():
        raise DataError("codebook file not found", path)
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise CorruptStreamError(f"truncated codebook header in {path}")
    magic, version, K, dim = HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION:
        raise CorruptStreamError(f"unsupported codebook format in {path}")
    expected = HEADER.size + K * dim * 4
    if len(raw) != expected:
        raise CorruptStreamError(
            f"codebook payload has {len(raw)} bytes, expected {expected}"
        )
    centroids = np.frombuffer(raw, dtype="<f4", offset=HEADER.size)
    return VQCodebook(centroids=centroids.reshape(K, dim).astype(np.float64))

