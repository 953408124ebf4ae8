"""Dataset ingestion, the three-scale test mixture, and batching.

The loader reads the standard CIFAR-10 binary layout: six batch files of
10000 records, each record 1 label byte followed by 3x1024 channel-plane
bytes (row-major).  Because that corpus is not always available, the
module can also synthesize a drop-in corpus in the identical format:
ten geometric object classes rendered with soft edges, gradient
backgrounds, mild texture and noise, at randomized positions and sizes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import DataError
from .scaling import resample_image

IMAGE_SIDE = 32
CHANNELS = 3
RECORD_BYTES = 1 + CHANNELS * IMAGE_SIDE * IMAGE_SIDE  # 3073
RECORDS_PER_BATCH = 10000
BATCH_BYTES = RECORD_BYTES * RECORDS_PER_BATCH  # 30,730,000
TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
TEST_FILE = "test_batch.bin"
NUM_CLASSES = 10


class ScaleTag(IntEnum):
    ORIGINAL = 0
    SMALL = 1
    MIDDLE = 2
    LARGE = 3


@dataclass
class DatasetSplit:
    """Labeled images plus per-sample apparent-scale tags."""

    images: np.ndarray      # (n, 3, 32, 32) float32 in [0, 1]
    labels: np.ndarray      # (n,) int64 in [0, 10)
    scale_tags: np.ndarray  # (n,) uint8, ScaleTag values

    def __post_init__(self):
        n = self.images.shape[0]
        if self.labels.shape != (n,) or self.scale_tags.shape != (n,):
            raise DataError("images/labels/scale_tags counts disagree")
        if n and (self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES):
            raise DataError("labels out of range")
        if not np.isfinite(self.images).all():
            raise DataError("images contain non-finite values")

    def __len__(self) -> int:
        return self.images.shape[0]

    def take(self, indices) -> "DatasetSplit":
        return DatasetSplit(self.images[indices], self.labels[indices],
                            self.scale_tags[indices])


def _load_batch_file(path: str):
    if not os.path.exists(path):
        raise DataError(f"missing dataset file {path}")
    size = os.path.getsize(path)
    if size != BATCH_BYTES:
        raise DataError(
            f"{path}: expected {BATCH_BYTES} bytes, found {size}")
    raw = np.fromfile(path, dtype=np.uint8).reshape(RECORDS_PER_BATCH, RECORD_BYTES)
    labels = raw[:, 0].astype(np.int64)
    if labels.max() >= NUM_CLASSES:
        raise DataError(
            f"{path}: label byte {labels.max()} outside 0..{NUM_CLASSES - 1}")
    images = raw[:, 1:].reshape(RECORDS_PER_BATCH, CHANNELS,
                                IMAGE_SIDE, IMAGE_SIDE)
    return images.astype(np.float32) / 255.0, labels


def load_cifar10(dir_path: str) -> tuple[DatasetSplit, DatasetSplit]:
    """Load the six binary batches; (train 50000, test 10000)."""
    train_images, train_labels = [], []
    for name in TRAIN_FILES:
        imgs, labels = _load_batch_file(os.path.join(dir_path, name))
        train_images.append(imgs)
        train_labels.append(labels)
    test_images, test_labels = _load_batch_file(os.path.join(dir_path, TEST_FILE))
    train = DatasetSplit(np.concatenate(train_images),
                         np.concatenate(train_labels),
                         np.zeros(5 * RECORDS_PER_BATCH, dtype=np.uint8))
    test = DatasetSplit(test_images, test_labels,
                        np.zeros(RECORDS_PER_BATCH, dtype=np.uint8))
    return train, test


def central_crop(images: np.ndarray, crop: int) -> np.ndarray:
    side = images.shape[-1]
    lo = (side - crop) // 2
    return images[..., lo:lo + crop, lo:lo + crop]


def _crop_resize(images: np.ndarray, crop: int, target: int) -> np.ndarray:
    cropped = central_crop(images, crop).astype(np.float64)
    out = np.empty((images.shape[0], images.shape[1], target, target),
                   dtype=np.float32)
    for i in range(images.shape[0]):
        out[i] = resample_image(cropped[i], target, target)
    return out


def make_scaled_test_set(test: DatasetSplit) -> DatasetSplit:
    """Three-scale mixture: originals plus central 28 and 24 crops.

    A larger crop-zoom makes the apparent object larger, so originals are
    tagged small, the 28-crop middle and the 24-crop large.  3n samples.
    """
    if test.images.shape[-1] != IMAGE_SIDE:
        raise DataError("scaled test set expects 32x32 source images")
    n = len(test)
    middles = _crop_resize(test.images, 28, IMAGE_SIDE)
    larges = _crop_resize(test.images, 24, IMAGE_SIDE)
    images = np.concatenate([test.images, middles, larges])
    labels = np.concatenate([test.labels] * 3)
    tags = np.concatenate([
        np.full(n, ScaleTag.SMALL, dtype=np.uint8),
        np.full(n, ScaleTag.MIDDLE, dtype=np.uint8),
        np.full(n, ScaleTag.LARGE, dtype=np.uint8),
    ])
    return DatasetSplit(images, labels, tags)


def make_object_size_series(image: np.ndarray, label: int,
                            max_zoom: float = 2.0, step: int = 4):
    """Central crops from full size down to size/max_zoom, resized back.

    Returns a list of (zoom, image) pairs with zoom = side / crop, from
    1.0 up to max_zoom, plus the label for convenience.
    """
    side = image.shape[-1]
    smallest = int(round(side / max_zoom))
    sizes = list(range(side, smallest - 1, -step))
    series = []
    for crop in sizes:
        if crop == side:
            series.append((1.0, image.astype(np.float32)))
        else:
            cropped = central_crop(image, crop).astype(np.float64)
            series.append((side / crop,
                           resample_image(cropped, side, side).astype(np.float32)))
    return series


def compute_pixel_mean(split: DatasetSplit) -> np.ndarray:
    """Per-pixel mean image of a split (float32)."""
    return split.images.mean(axis=0, dtype=np.float64).astype(np.float32)


def batch_iterator(split: DatasetSplit, batch_size: int, seed: int,
                   epoch: int = 0, mean: np.ndarray | None = None):
    """Shuffled minibatches for one epoch; the last short batch is kept.

    The order is a pure function of (seed, epoch).  When ``mean`` is given
    it is subtracted from every image.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(split))
    for start in range(0, len(split), batch_size):
        idx = order[start:start + batch_size]
        images = split.images[idx]
        if mean is not None:
            images = images - mean
        yield images, split.labels[idx]


def balanced_subset(split: DatasetSplit, per_class: int) -> DatasetSplit:
    """Deterministic class-balanced subset: first n occurrences per class."""
    chosen = []
    for cls in range(NUM_CLASSES):
        idx = np.flatnonzero(split.labels == cls)[:per_class]
        if idx.size < per_class:
            raise DataError(
                f"class {cls} has only {idx.size} samples, wanted {per_class}")
        chosen.append(idx)
    order = np.sort(np.concatenate(chosen))
    return split.take(order)


def write_split_binary(split: DatasetSplit, images_path: str,
                       tags_path: str | None = None) -> None:
    """Write a split in the CIFAR record format plus an optional tag file."""
    n = len(split)
    quantized = np.clip(np.rint(split.images * 255.0), 0, 255).astype(np.uint8)
    records = np.empty((n, RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = split.labels.astype(np.uint8)
    records[:, 1:] = quantized.reshape(n, -1)
    records.tofile(images_path)
    if tags_path is not None:
        split.scale_tags.astype(np.uint8).tofile(tags_path)


def read_split_binary(images_path: str, tags_path: str | None = None) -> DatasetSplit:
    """Read a split written by :func:`write_split_binary` (any record count)."""
    size = os.path.getsize(images_path)
    if size % RECORD_BYTES:
        raise DataError(f"{images_path}: size {size} is not a whole "
                        f"number of {RECORD_BYTES}-byte records")
    raw = np.fromfile(images_path, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = raw[:, 0].astype(np.int64)
    if labels.size and labels.max() >= NUM_CLASSES:
        raise DataError(f"{images_path}: label byte out of range")
    images = raw[:, 1:].reshape(-1, CHANNELS, IMAGE_SIDE, IMAGE_SIDE)
    images = images.astype(np.float32) / 255.0
    if tags_path is not None:
        tags = np.fromfile(tags_path, dtype=np.uint8)
        if tags.shape[0] != labels.shape[0]:
            raise DataError(f"{tags_path}: tag count disagrees with records")
    else:
        tags = np.zeros(labels.shape[0], dtype=np.uint8)
    return DatasetSplit(images, labels, tags)


# -- synthetic corpus --------------------------------------------------------

_GRID_Y, _GRID_X = np.meshgrid(np.arange(IMAGE_SIDE, dtype=np.float64),
                               np.arange(IMAGE_SIDE, dtype=np.float64),
                               indexing="ij")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -30.0, 30.0)))


def _shape_mask(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Soft coverage mask in [0, 1] per image, one geometry per class."""
    n = labels.shape[0]
    cx = 16.0 + rng.uniform(-5.0, 5.0, (n, 1, 1))
    cy = 16.0 + rng.uniform(-5.0, 5.0, (n, 1, 1))
    radius = rng.uniform(6.5, 12.5, (n, 1, 1))
    width = rng.uniform(0.8, 1.6, (n, 1, 1))
    dx = _GRID_X[None] - cx
    dy = _GRID_Y[None] - cy
    mask = np.zeros((n, IMAGE_SIDE, IMAGE_SIDE))
    for cls in range(NUM_CLASSES):
        sel = labels == cls
        if not sel.any():
            continue
        sdx, sdy = dx[sel], dy[sel]
        r, w = radius[sel], width[sel]
        if cls == 0:    # horizontal stripes
            freq = rng.uniform(1.5, 3.5, (sel.sum(), 1, 1))
            phase = rng.uniform(0, 2 * np.pi, (sel.sum(), 1, 1))
            m = 0.5 + 0.5 * np.cos(2 * np.pi * freq * _GRID_Y[None] / IMAGE_SIDE + phase)
        elif cls == 1:  # vertical stripes
            freq = rng.uniform(1.5, 3.5, (sel.sum(), 1, 1))
            phase = rng.uniform(0, 2 * np.pi, (sel.sum(), 1, 1))
            m = 0.5 + 0.5 * np.cos(2 * np.pi * freq * _GRID_X[None] / IMAGE_SIDE + phase)
        elif cls == 2:  # filled disk
            d = np.sqrt(sdx**2 + sdy**2)
            m = _sigmoid((r - d) / w)
        elif cls == 3:  # ring
            d = np.sqrt(sdx**2 + sdy**2)
            m = _sigmoid((0.35 * r - np.abs(d - r)) / w)
        elif cls == 4:  # square
            d = np.maximum(np.abs(sdx), np.abs(sdy))
            m = _sigmoid((0.8 * r - d) / w)
        elif cls == 5:  # X cross
            d_diag = np.minimum(np.abs(sdx - sdy), np.abs(sdx + sdy)) / np.sqrt(2.0)
            extent = np.maximum(np.abs(sdx), np.abs(sdy))
            m = _sigmoid((0.3 * r - d_diag) / w) * _sigmoid((r - extent) / w)
        elif cls == 6:  # upward triangle, apex at the top
            halfwidth = (sdy + 0.8 * r) / 1.4
            m = _sigmoid((halfwidth - np.abs(sdx)) / w) * \
                _sigmoid((0.6 * r - sdy) / w)
        elif cls == 7:  # soft checkerboard
            freq = rng.uniform(1.5, 3.0, (sel.sum(), 1, 1))
            px = rng.uniform(0, 2 * np.pi, (sel.sum(), 1, 1))
            py = rng.uniform(0, 2 * np.pi, (sel.sum(), 1, 1))
            m = _sigmoid(5.0 * np.sin(2 * np.pi * freq * _GRID_X[None] / IMAGE_SIDE + px)
                         * np.sin(2 * np.pi * freq * _GRID_Y[None] / IMAGE_SIDE + py))
        elif cls == 8:  # gaussian blob
            d2 = sdx**2 + sdy**2
            m = np.exp(-d2 / (2.0 * (0.55 * r) ** 2))
        else:           # diamond
            d = np.abs(sdx) + np.abs(sdy)
            m = _sigmoid((1.1 * r - d) / w)
        mask[sel] = m
    return mask


def _texture(n: int, rng: np.random.Generator) -> np.ndarray:
    """Low-amplitude sinusoid mixture; keeps spectra vaguely natural."""
    out = np.zeros((n, IMAGE_SIDE, IMAGE_SIDE))
    for _ in range(3):
        u = rng.uniform(-5.0, 5.0, (n, 1, 1))
        v = rng.uniform(-5.0, 5.0, (n, 1, 1))
        phase = rng.uniform(0, 2 * np.pi, (n, 1, 1))
        amp = rng.uniform(0.0, 0.08, (n, 1, 1))
        out += amp * np.cos(2 * np.pi * (u * _GRID_X[None] + v * _GRID_Y[None])
                            / IMAGE_SIDE + phase)
    return out


def render_synthetic_images(labels: np.ndarray,
                            rng: np.random.Generator) -> np.ndarray:
    """(n, 3, 32, 32) float32 images in [0, 1] for the given labels."""
    n = labels.shape[0]
    mask = _shape_mask(labels, rng)[:, None]  # (n,1,32,32)

    theta = rng.uniform(0, 2 * np.pi, (n, 1, 1))
    ramp = ((np.cos(theta) * _GRID_X[None] + np.sin(theta) * _GRID_Y[None])
            / IMAGE_SIDE + 0.5)
    bg_a = rng.uniform(0.15, 0.85, (n, CHANNELS, 1, 1))
    bg_b = rng.uniform(0.15, 0.85, (n, CHANNELS, 1, 1))
    background = bg_a + (bg_b - bg_a) * ramp[:, None]

    fg = rng.uniform(0.05, 0.95, (n, CHANNELS, 1, 1))
    # force contrast against the mid-background
    mid = (bg_a + bg_b) / 2.0
    flip = np.linalg.norm((fg - mid)[:, :, 0, 0], axis=1, keepdims=True) < 0.45
    fg[:, :, 0, 0] = np.where(flip, np.clip(2.0 * mid[:, :, 0, 0] - fg[:, :, 0, 0]
                                            + np.sign(mid[:, :, 0, 0] - 0.5) * -0.4,
                                            0.02, 0.98), fg[:, :, 0, 0])

    img = background * (1.0 - mask) + fg * mask
    img += _texture(n, rng)[:, None]
    img += rng.normal(0.0, 0.015, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_synthetic_corpus(dir_path: str, seed: int = 0) -> None:
    """Write 6 batch files in the CIFAR-10 binary layout (50k train + 10k test)."""
    os.makedirs(dir_path, exist_ok=True)
    for batch_index, name in enumerate(TRAIN_FILES + [TEST_FILE]):
        rng = np.random.default_rng([seed, batch_index])
        labels = rng.integers(0, NUM_CLASSES, RECORDS_PER_BATCH)
        images = render_synthetic_images(labels, rng)
        split = DatasetSplit(images, labels.astype(np.int64),
                             np.zeros(RECORDS_PER_BATCH, dtype=np.uint8))
        write_split_binary(split, os.path.join(dir_path, name))
