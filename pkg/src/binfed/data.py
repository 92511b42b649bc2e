"""IDX dataset loading and client partitioning.

Consumes the classic big-endian IDX containers (optionally gzipped) used
by MNIST and Fashion-MNIST; no downloading happens here. Partitioners
split a training set across clients either uniformly or per-class with
Dirichlet-distributed proportions for controllable heterogeneity.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import stream

__all__ = [
    "IdxFormatError",
    "ImageDataset",
    "Partition",
    "read_idx",
    "load_dataset",
    "load_mnist",
    "partition_iid",
    "partition_dirichlet",
    "batch_iterator",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

TRAIN_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
TEST_FILES = ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


class IdxFormatError(ValueError):
    """Raised for bad magic numbers, truncated files, or mismatched headers."""


@dataclass
class ImageDataset:
    """Raw byte images with labels; normalization to [0,1] happens on demand."""

    images: np.ndarray  # (N, H, W) uint8
    labels: np.ndarray  # (N,) uint8, values 0..9
    split: str  # "train" | "test"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise IdxFormatError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() > 9):
            raise IdxFormatError("labels outside 0..9")

    def __len__(self) -> int:
        return len(self.labels)

    def normalized(self) -> np.ndarray:
        """Images as float64 in [0, 1], shaped (N, 1, H, W) for the network."""
        return (self.images.astype(np.float64) / 255.0)[:, None, :, :]


@dataclass
class Partition:
    """Disjoint index lists into a training split, one per client."""

    shards: list[np.ndarray]

    @property
    def n_clients(self) -> int:
        return len(self.shards)

    def to_json_dict(self) -> dict[str, list[int]]:
        return {str(c): [int(i) for i in shard] for c, shard in enumerate(self.shards)}


def _open_maybe_gzip(path: Path):
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path: str | Path) -> np.ndarray:
    """Parse one IDX file into an array (images: (N,H,W); labels: (N,))."""
    path = Path(path)
    if not path.exists():
        raise IdxFormatError(f"no such file: {path}")
    with _open_maybe_gzip(path) as f:
        header = f.read(4)
        if len(header) < 4:
            raise IdxFormatError(f"{path}: truncated header")
        (magic,) = struct.unpack(">I", header)
        if magic == IMAGE_MAGIC:
            dims = f.read(12)
            if len(dims) < 12:
                raise IdxFormatError(f"{path}: truncated image header")
            count, rows, cols = struct.unpack(">III", dims)
            payload = f.read(count * rows * cols + 1)
            if len(payload) < count * rows * cols:
                raise IdxFormatError(
                    f"{path}: expected {count * rows * cols} pixels, got {len(payload)}"
                )
            if len(payload) > count * rows * cols:
                raise IdxFormatError(f"{path}: trailing bytes after pixel data")
            return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)
        if magic == LABEL_MAGIC:
            dims = f.read(4)
            if len(dims) < 4:
                raise IdxFormatError(f"{path}: truncated label header")
            (count,) = struct.unpack(">I", dims)
            payload = f.read(count + 1)
            if len(payload) < count:
                raise IdxFormatError(f"{path}: expected {count} labels, got {len(payload)}")
            if len(payload) > count:
                raise IdxFormatError(f"{path}: trailing bytes after label data")
            return np.frombuffer(payload, dtype=np.uint8)
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}")


def load_dataset(images_path: str | Path, labels_path: str | Path, split: str) -> ImageDataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise IdxFormatError(f"{images_path} is not an image file")
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path} is not a label file")
    return ImageDataset(images, labels, split)


def _find_idx(data_dir: Path, stem: str) -> Path:
    for candidate in (data_dir / stem, data_dir / (stem + ".gz")):
        if candidate.exists():
            return candidate
    raise IdxFormatError(f"missing {stem}[.gz] under {data_dir}")


def load_mnist(data_dir: str | Path, split: str = "train") -> ImageDataset:
    """Load an MNIST-layout dataset (same filenames for Fashion-MNIST)."""
    data_dir = Path(data_dir)
    stems = TRAIN_FILES if split == "train" else TEST_FILES
    return load_dataset(_find_idx(data_dir, stems[0]), _find_idx(data_dir, stems[1]), split)


def partition_iid(ds: ImageDataset, n_clients: int, seed: int) -> Partition:
    """Seeded uniform shuffle, contiguous near-equal chunks (remainder spread)."""
    if n_clients > len(ds):
        raise ValueError(f"{n_clients} clients but only {len(ds)} samples")
    perm = stream(seed, "partition").permutation(len(ds))
    base = len(ds) // n_clients
    rem = len(ds) % n_clients
    shards, offset = [], 0
    for c in range(n_clients):
        size = base + (1 if c < rem else 0)
        shards.append(np.sort(perm[offset : offset + size]))
        offset += size
    return Partition(shards)


def partition_dirichlet(ds: ImageDataset, n_clients: int, alpha: float, seed: int) -> Partition:
    """Per-class Dirichlet split.

    For each class, client proportions are drawn from Dir(alpha * 1) and
    sample counts assigned by largest-remainder rounding. Clients that end
    up empty are topped up from the currently largest shard so every client
    holds at least one sample.
    """
    if alpha <= 0:
        raise ValueError(f"Dirichlet concentration must be > 0, got {alpha}")
    gen = stream(seed, "partition")
    per_client: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
    for cls in range(10):
        idx = np.flatnonzero(ds.labels == cls)
        if idx.size == 0:
            continue
        idx = gen.permutation(idx)
        props = gen.dirichlet(np.full(n_clients, alpha))
        raw = props * idx.size
        counts = np.floor(raw).astype(int)
        leftover = idx.size - counts.sum()
        # largest remainders take the leftover; ties resolved by client index
        order = np.lexsort((np.arange(n_clients), -(raw - counts)))
        counts[order[:leftover]] += 1
        offset = 0
        for c in range(n_clients):
            per_client[c].append(idx[offset : offset + counts[c]])
            offset += counts[c]
    shards = [np.sort(np.concatenate(parts)) for parts in per_client]
    # top up empty clients from the largest shard
    for c in range(n_clients):
        while shards[c].size == 0:
            donor = int(np.argmax([s.size for s in shards]))
            take = int(gen.integers(shards[donor].size))
            shards[c] = np.array([shards[donor][take]])
            shards[donor] = np.delete(shards[donor], take)
    return Partition(shards)


def batch_iterator(shard: np.ndarray, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches; reshuffles each epoch, keeps the
    final short batch, and is fully determined by the generator state."""
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    shard = np.asarray(shard)
    while True:
        order = rng.permutation(shard.size)
        for start in range(0, shard.size, batch_size):
            yield shard[order[start : start + batch_size]]
