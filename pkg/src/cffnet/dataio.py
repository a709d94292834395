"""IDX file loading and label-embedded positive/negative batch construction."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
NUM_CLASSES = 10


def _read(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def load_idx_images(path):
    """Load an IDX3 image file as an (N, rows*cols) float64 matrix scaled to [0, 1]."""
    raw = _read(path)
    if len(raw) < 16:
        raise FormatError(f"{path}: header needs 16 bytes, file has {len(raw)}")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise FormatError(
            f"{path}: bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}"
        )
    expected = n * rows * cols
    actual = len(raw) - 16
    if actual != expected:
        raise FormatError(f"{path}: expected {expected} pixel bytes, found {actual}")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, rows * cols)
    return pixels.astype(np.float64) / 255.0


def load_idx_labels(path):
    """Load an IDX1 label file as an int64 array of class ids in 0..9."""
    raw = _read(path)
    if len(raw) < 8:
        raise FormatError(f"{path}: header needs 8 bytes, file has {len(raw)}")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise FormatError(
            f"{path}: bad label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}"
        )
    actual = len(raw) - 8
    if actual != n:
        raise FormatError(f"{path}: expected {n} label bytes, found {actual}")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)
    bad = np.flatnonzero(labels >= NUM_CLASSES)
    if bad.size:
        raise FormatError(
            f"{path}: label {labels[bad[0]]} at index {bad[0]} is outside 0..9"
        )
    return labels


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 2:
            raise FormatError(f"images must be 2-D, got shape {images.shape}")
        if labels.shape != (images.shape[0],):
            raise FormatError(
                f"{images.shape[0]} images but {labels.shape[0]} labels"
            )
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise FormatError("pixel values must lie in [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= NUM_CLASSES):
            raise FormatError("labels must lie in 0..9")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.shape[0]

    def head(self, n):
        """First ``n`` samples (the whole set when ``n`` is None or too large)."""
        if n is None or n >= len(self):
            return self
        return Dataset(self.images[:n], self.labels[:n])


def load_dataset(images_path, labels_path, limit=None):
    ds = Dataset(load_idx_images(images_path), load_idx_labels(labels_path))
    return ds.head(limit)


def embed_label(x, c):
    """Copy of vector ``x`` with its first 10 entries replaced by one-hot(c)."""
    x = np.array(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < NUM_CLASSES:
        raise ContractError(f"expected a vector of length >= 10, got shape {x.shape}")
    if not 0 <= c < NUM_CLASSES:
        raise ContractError(f"class id {c} outside 0..9")
    x[:NUM_CLASSES] = 0.0
    x[c] = 1.0
    return x


def embed_labels(x, labels):
    """Row-wise :func:`embed_label` for a batch."""
    x = np.array(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] < NUM_CLASSES or labels.shape != (x.shape[0],):
        raise ContractError(
            f"cannot embed {labels.shape} labels into batch of shape {x.shape}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= NUM_CLASSES):
        raise ContractError("class ids must lie in 0..9")
    x[:, :NUM_CLASSES] = 0.0
    x[np.arange(x.shape[0]), labels] = 1.0
    return x


@dataclass
class PosNegBatch:
    x_pos: np.ndarray
    x_neg: np.ndarray
    true_labels: np.ndarray
    neg_labels: np.ndarray


def random_wrong_labels(labels, rng):
    """One uniformly drawn wrong class per entry of ``labels``."""
    labels = np.asarray(labels, dtype=np.int64)
    return (labels + rng.integers(1, NUM_CLASSES, size=labels.shape[0])) % NUM_CLASSES


def make_pos_neg_batch(ds, indices, rng):
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise ContractError("make_pos_neg_batch needs at least one index")
    if indices.min() < 0 or indices.max() >= len(ds):
        raise ContractError(f"indices out of range for dataset of size {len(ds)}")
    x = ds.images[indices]
    true = ds.labels[indices]
    neg = random_wrong_labels(true, rng)
    return PosNegBatch(embed_labels(x, true), embed_labels(x, neg), true, neg)


def epoch_batches(ds, batch_size, rng):
    """Minibatches for one epoch.

    ``batch_size`` 0 (or >= len(ds)) gives a single full batch in dataset
    order; otherwise the set is shuffled and cut into consecutive chunks.
    Negative labels are drawn fresh for every batch.
    """
    n = len(ds)
    if batch_size < 0:
        raise ContractError(f"batch_size must be >= 0, got {batch_size}")
    if batch_size == 0 or batch_size >= n:
        yield make_pos_neg_batch(ds, np.arange(n), rng)
        return
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield make_pos_neg_batch(ds, order[start:start + batch_size], rng)
