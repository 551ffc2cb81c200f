"""Dataset ingestion: CIFAR-10 binary batches and a seeded synthetic generator."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CIFAR_RECORD_BYTES = 1 + 3 * 32 * 32
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"

# Environment variable naming the dataset root directory.
DATA_ROOT_ENV = "TOKENSKIP_DATA_ROOT"


class IngestError(ValueError):
    """Raised when a dataset file is structurally corrupt."""


@dataclass
class Split:
    """One dataset split: float images [n, 3, H, W] plus integer labels [n]."""
    images: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.images.shape[0]

    def subset(self, n: int) -> "Split":
        return Split(self.images[:n], self.labels[:n])


def _read_cifar_file(path: Path):
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD_BYTES != 0:
        offset = raw.size - raw.size % CIFAR_RECORD_BYTES
        raise IngestError(
            f"{path}: truncated record at byte offset {offset} "
            f"(file size {raw.size} is not a multiple of {CIFAR_RECORD_BYTES})"
        )
    records = raw.reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise IngestError(
            f"{path}: invalid label {labels[bad]} at record {bad} "
            f"(byte offset {bad * CIFAR_RECORD_BYTES})"
        )
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return images, labels


def load_cifar10(root) -> tuple[Split, Split]:
    """Load the standard binary-format CIFAR-10 batches from a directory."""
    root = Path(root)
    # Tolerate the conventional extracted directory name.
    if not (root / CIFAR_TEST_FILE).exists() \
            and (root / "cifar-10-batches-bin" / CIFAR_TEST_FILE).exists():
        root = root / "cifar-10-batches-bin"
    train_parts = []
    for name in CIFAR_TRAIN_FILES:
        path = root / name
        if not path.exists():
            raise FileNotFoundError(f"missing CIFAR-10 batch {path}")
        train_parts.append(_read_cifar_file(path))
    test_images, test_labels = _read_cifar_file(root / CIFAR_TEST_FILE)
    train = Split(np.concatenate([p[0] for p in train_parts]),
                  np.concatenate([p[1] for p in train_parts]))
    return train, Split(test_images, test_labels)


def class_tints(classes: int) -> np.ndarray:
    """Deterministic per-class channel offsets, [classes, 3]."""
    k = np.arange(classes)[:, None]
    c = np.arange(3)[None, :]
    return 0.1 * np.cos(2.0 * np.pi * (k / classes + c / 3.0))


def synthetic(seed: int, n: int, classes: int = 10,
              image_size: int = 32) -> Split:
    """Class-conditional patterns for CI: class k gets a bright square in
    grid cell k plus a class-specific color tint on a noisy background. The
    tint makes the class linearly readable from pooled features, so small
    models learn the task within a few hundred steps. Fully seeded."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, size=n)
    images = rng.normal(0.35, 0.12, size=(n, 3, image_size, image_size))
    images += class_tints(classes)[labels][:, :, None, None]
    grid = int(np.ceil(np.sqrt(classes)))
    cell = image_size // grid
    for i, k in enumerate(labels):
        r, c = divmod(int(k), grid)
        y0, x0 = r * cell, c * cell
        images[i, :, y0:y0 + cell, x0:x0 + cell] += 0.6
    return Split(np.clip(images, 0.0, 1.0).astype(np.float32),
                 labels.astype(np.int64))


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray  # [3]
    std: np.ndarray   # [3]


def channel_stats(split: Split) -> ChannelStats:
    mean = split.images.mean(axis=(0, 2, 3))
    std = split.images.std(axis=(0, 2, 3))
    return ChannelStats(mean, np.where(std == 0, 1.0, std))


def normalize(split: Split, stats: ChannelStats) -> Split:
    shaped = lambda v: v.reshape(1, 3, 1, 1).astype(split.images.dtype)
    return Split((split.images - shaped(stats.mean)) / shaped(stats.std),
                 split.labels)


def load_dataset(source: str, root=None, *, seed: int = 0,
                 synthetic_n: int = 4096, synthetic_val_n: int = 512,
                 classes: int = 10, image_size: int = 32):
    """Resolve a dataset source name to normalized (train, val) splits."""
    if source == "cifar10":
        root = root or os.environ.get(DATA_ROOT_ENV)
        if not root:
            raise FileNotFoundError(
                f"cifar10 needs a dataset root (set {DATA_ROOT_ENV} or dataset.root)"
            )
        train, val = load_cifar10(root)
    elif source == "synthetic":
        train = synthetic(seed, synthetic_n, classes, image_size)
        val = synthetic(seed + 1, synthetic_val_n, classes, image_size)
    else:
        raise ValueError(f"unknown dataset source {source!r}")
    stats = channel_stats(train)
    return normalize(train, stats), normalize(val, stats)
