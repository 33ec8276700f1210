"""
Episode frames: loading, temporal subsampling, k-center selection,
a fallback embedder and 3x3 contact sheets.
"""

import logging
import os
import re
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from PIL import Image, ImageOps, UnidentifiedImageError

from btforge.exceptions import (
    ConfigurationError,
    DecodeError,
    DimensionMismatchError,
    InvalidPathError,
    KTooLargeError,
    SchemaError,
    WrongFrameCountError
)

logger = logging.getLogger(__name__)

FRAME_RE = re.compile(r'^frame_(\d{6})\.png$')
META_FILE = 'meta.yml'
EMBEDDINGS_FILE = 'embeddings.csv'

GRID = 3
SHEET_FRAMES = GRID * GRID
EMBED_SIZE = (16, 16)
METRICS = ('euclidean', 'cosine')

ImageLike = Union[str, Image.Image]


@dataclass(frozen=True)
class Frame:
    """One frame file of an episode; index is its position in the episode."""
    path: str
    timestamp: float
    index: int


@dataclass(frozen=True)
class EpisodeSource:
    """A recorded episode: ordered frames plus its language instruction."""

    episode_id: str
    frames: Tuple[Frame, ...]
    instruction: str
    directory: Optional[str] = None
    embeddings: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, 'frames', tuple(self.frames))
        if not self.frames:
            raise SchemaError(f"Episode '{self.episode_id}' has no frames")
        stamps = [f.timestamp for f in self.frames]
        if any(b < a for a, b in zip(stamps, stamps[1:])):
            raise SchemaError(f"Episode '{self.episode_id}' has decreasing timestamps", path='timestamps')
        if self.embeddings is not None and len(self.embeddings) != len(self.frames):
            raise SchemaError(
                f"Episode '{self.episode_id}' has {len(self.embeddings)} embedding rows "
                f"for {len(self.frames)} frames", path=EMBEDDINGS_FILE
            )


def load_episode_source(directory: str, episode_id: Optional[str] = None) -> EpisodeSource:
    """
    Load an episode directory: frame_%06d.png files, meta.yml and an optional
    embeddings.csv with one comma-separated row per frame.

    Raises:
        InvalidPathError: If the directory or its meta file is missing
        SchemaError: If the metadata is inconsistent with the frames
    """
    if not os.path.isdir(directory):
        raise InvalidPathError(f"Episode directory does not exist: {directory}")
    episode_id = episode_id or os.path.basename(os.path.normpath(directory))

    meta_path = os.path.join(directory, META_FILE)
    if not os.path.isfile(meta_path):
        raise InvalidPathError(f"Episode metadata does not exist: {meta_path}")
    try:
        with open(meta_path, 'r', encoding='utf-8') as f:
            meta = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise SchemaError(f"Invalid YAML in {meta_path}: {e}")
    if not isinstance(meta, dict):
        raise SchemaError(f"Episode metadata must be a mapping: {meta_path}")
    instruction = meta.get('instruction')
    if not isinstance(instruction, str) or not instruction.strip():
        raise SchemaError(f"Episode '{episode_id}' has no instruction", path='instruction')

    numbered = []
    for name in os.listdir(directory):
        match = FRAME_RE.match(name)
        if match:
            numbered.append((int(match.group(1)), os.path.join(directory, name)))
    numbered.sort()

    timestamps = meta.get('timestamps')
    if timestamps is None:
        timestamps = [float(number) for number, _ in numbered]
    elif not isinstance(timestamps, list) or len(timestamps) != len(numbered):
        raise SchemaError(
            f"Episode '{episode_id}' lists {len(timestamps) if isinstance(timestamps, list) else 'no'} "
            f"timestamps for {len(numbered)} frames", path='timestamps'
        )
    else:
        try:
            timestamps = [float(ts) for ts in timestamps]
        except (TypeError, ValueError) as e:
            raise SchemaError(f"Non-numeric timestamp in {meta_path}: {e}", path='timestamps')

    embeddings = None
    embeddings_path = os.path.join(directory, EMBEDDINGS_FILE)
    if os.path.isfile(embeddings_path):
        try:
            embeddings = np.loadtxt(embeddings_path, delimiter=',', ndmin=2)
        except ValueError as e:
            raise SchemaError(f"Unreadable embeddings for '{episode_id}': {e}", path=EMBEDDINGS_FILE)

    frames = tuple(Frame(path, ts, i) for i, ((_, path), ts) in enumerate(zip(numbered, timestamps)))
    return EpisodeSource(episode_id, frames, instruction.strip(), directory, embeddings)


def discover_sources(root: str) -> List[EpisodeSource]:
    """Every episode directory (one holding meta.yml) directly under root, sorted by name."""
    if not os.path.exists(root):
        raise InvalidPathError(f"Source directory does not exist: {root}")
    if not os.path.isdir(root):
        raise InvalidPathError(f"Source path is not a directory: {root}")
    sources = []
    for name in sorted(os.listdir(root)):
        path = os.path.join(root, name)
        if os.path.isdir(path) and os.path.isfile(os.path.join(path, META_FILE)):
            sources.append(load_episode_source(path, name))
    logger.debug(f"Discovered {len(sources)} episodes under {root}")
    return sources


def subsample(frames: Sequence, stride: int = 10) -> list:
    """Keep frames 0, stride, 2*stride, ... in order."""
    if isinstance(stride, bool) or not isinstance(stride, int) or stride < 1:
        raise ConfigurationError(f"Frame stride must be a positive integer, got {stride!r}")
    return list(frames[::stride])


def pairwise_distances(points: np.ndarray, metric: str = 'euclidean') -> np.ndarray:
    """Full distance matrix between the rows of points."""
    if metric == 'euclidean':
        diff = points[:, None, :] - points[None, :, :]
        return np.sqrt((diff ** 2).sum(axis=-1))
    if metric == 'cosine':
        norms = np.linalg.norm(points, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        unit = points / norms
        return np.clip(1.0 - unit @ unit.T, 0.0, 2.0)
    raise ConfigurationError(f"Unknown distance metric '{metric}'", tip=f"Use one of: {', '.join(METRICS)}")


def _stack(vectors) -> np.ndarray:
    rows = [np.asarray(v, dtype=float).ravel() for v in vectors]
    dims = sorted({r.shape[0] for r in rows})
    if len(dims) > 1:
        raise DimensionMismatchError(f"Embedding vectors differ in dimension: {dims}")
    return np.vstack(rows) if rows else np.zeros((0, 0))


def kcenter_greedy(
    vectors,
    k: int = 9,
    seed_index: int = 0,
    metric: str = 'euclidean',
    timestamps: Optional[Sequence[float]] = None
) -> List[int]:
    """
    Greedy farthest-point selection of k centers.

    Starting from seed_index, repeatedly add the point whose distance to the
    nearest chosen center is largest (ties go to the lowest index).

    Returns:
        Selected indices sorted by timestamp (by index when no timestamps)

    Raises:
        DimensionMismatchError: If vectors differ in length
        KTooLargeError: If k exceeds the number of vectors
    """
    points = _stack(vectors)
    n = len(points)
    if k > n:
        raise KTooLargeError(f"Cannot select {k} centers from {n} points")
    if k < 1:
        raise ConfigurationError(f"Number of centers must be positive, got {k}")
    if not 0 <= seed_index < n:
        raise ConfigurationError(f"Seed index {seed_index} is outside 0..{n - 1}")

    distances = pairwise_distances(points, metric)
    selected = [seed_index]
    min_distance = distances[seed_index].copy()
    min_distance[seed_index] = -1.0
    while len(selected) < k:
        farthest = int(np.argmax(min_distance))
        selected.append(farthest)
        min_distance = np.minimum(min_distance, distances[farthest])
        min_distance[selected] = -1.0

    order = timestamps if timestamps is not None else range(n)
    keys = list(order)
    return sorted(selected, key=lambda i: (keys[i], i))


def coverage_radius(vectors, centers: Sequence[int], metric: str = 'euclidean') -> float:
    """Largest distance from any point to its nearest center."""
    points = _stack(vectors)
    distances = pairwise_distances(points, metric)
    return float(distances[:, list(centers)].min(axis=1).max())


def _open(image: ImageLike) -> Image.Image:
    if isinstance(image, Image.Image):
        return image
    try:
        with Image.open(image) as opened:
            opened.load()
            return opened.copy()
    except (OSError, UnidentifiedImageError) as e:
        raise DecodeError(f"Cannot decode image {image}: {e}")


def fallback_embed(image: ImageLike) -> np.ndarray:
    """
    Cheap deterministic embedding: grayscale, 16x16 bilinear thumbnail,
    flattened and L2-normalized. An all-black image stays the zero vector.
    """
    gray = _open(image).convert('L').resize(EMBED_SIZE, Image.Resampling.BILINEAR)
    vector = np.asarray(gray, dtype=float).ravel() / 255.0
    norm = np.linalg.norm(vector)
    return vector if norm == 0 else vector / norm


def contact_sheet(
    frames: Sequence[ImageLike],
    cell_size: Optional[Tuple[int, int]] = None,
    background: Tuple[int, int, int] = (0, 0, 0)
) -> Image.Image:
    """
    Arrange exactly nine temporally ordered frames row-major on a 3x3 grid.

    Every frame is letterboxed into a cell (the first frame's size unless
    cell_size is given) without distorting its aspect ratio.

    Raises:
        WrongFrameCountError: Unless exactly nine frames are given
        DecodeError: If a frame cannot be decoded
    """
    if len(frames) != SHEET_FRAMES:
        raise WrongFrameCountError(f"A contact sheet needs {SHEET_FRAMES} frames, got {len(frames)}")
    images = [_open(f).convert('RGB') for f in frames]
    width, height = cell_size or images[0].size
    sheet = Image.new('RGB', (GRID * width, GRID * height), background)
    for i, image in enumerate(images):
        row, col = divmod(i, GRID)
        cell = ImageOps.pad(image, (width, height), method=Image.Resampling.BILINEAR, color=background)
        sheet.paste(cell, (col * width, row * height))
    return sheet


def select_frames(
    source: EpisodeSource,
    stride: int = 10,
    k: int = SHEET_FRAMES,
    seed_index: int = 0,
    metric: str = 'euclidean',
    embed: Optional[Callable[[ImageLike], np.ndarray]] = None
) -> List[Frame]:
    """
    Pick k visually distinct frames of an episode, in temporal order.

    Frames are subsampled by stride, embedded (sidecar rows when present,
    otherwise `embed`, default fallback_embed) and reduced by k-center greedy.
    Episodes with fewer candidates keep them all and repeat the last one.
    """
    candidates = subsample(source.frames, stride)
    if len(candidates) <= k:
        chosen = list(candidates)
    else:
        if source.embeddings is not None:
            vectors = source.embeddings[[f.index for f in candidates]]
        else:
            embed = embed or fallback_embed
            vectors = [embed(f.path) for f in candidates]
        picked = kcenter_greedy(vectors, k, seed_index, metric, [f.timestamp for f in candidates])
        chosen = [candidates[i] for i in picked]
    if len(chosen) < k:
        logger.debug(f"Episode '{source.episode_id}' has {len(chosen)} candidate frames, padding to {k}")
        chosen = chosen + [chosen[-1]] * (k - len(chosen))
    return chosen
