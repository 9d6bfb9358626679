"""IDX-format image ingestion and the 28x28 -> 64-dimensional reduction used
by the wide-mesh digit experiments."""

from __future__ import annotations

import gzip
import struct

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


class IdxError(ValueError):
    pass


def _open(path):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_idx_images(path) -> np.ndarray:
    """Images from an IDX3 file (optionally gzipped) as float array in [0, 1]."""
    with _open(path) as fh:
        magic, count, rows, cols = struct.unpack(">IIII", fh.read(16))
        if magic != IMAGE_MAGIC:
            raise IdxError(f"bad image magic {magic}, expected {IMAGE_MAGIC}")
        data = fh.read(count * rows * cols)
    if len(data) != count * rows * cols:
        raise IdxError("truncated image file")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(count, rows, cols)
    return arr.astype(float) / 255.0


def load_idx_labels(path) -> np.ndarray:
    """Labels from an IDX1 file (optionally gzipped)."""
    with _open(path) as fh:
        magic, count = struct.unpack(">II", fh.read(8))
        if magic != LABEL_MAGIC:
            raise IdxError(f"bad label magic {magic}, expected {LABEL_MAGIC}")
        data = fh.read(count)
    if len(data) != count:
        raise IdxError("truncated label file")
    return np.frombuffer(data, dtype=np.uint8).astype(int)


def write_idx_images(path, images: np.ndarray):
    """Write a uint8 image stack as IDX3 (gzipped when the path ends in .gz)."""
    images = np.asarray(images)
    if images.dtype != np.uint8:
        images = np.clip(np.round(images * 255.0), 0, 255).astype(np.uint8)
    count, rows, cols = images.shape
    with (gzip.open(str(path), "wb") if str(path).endswith(".gz") else open(path, "wb")) as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, count, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray):
    labels = np.asarray(labels).astype(np.uint8)
    with (gzip.open(str(path), "wb") if str(path).endswith(".gz") else open(path, "wb")) as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, labels.size))
        fh.write(labels.tobytes())


def mnist64_preprocess(image: np.ndarray) -> np.ndarray:
    """Reduce a 28x28 grayscale image to a unit-norm real 64-vector.

    Center-pad to 32x32, average 4x4 blocks down to 8x8, flatten, normalize.
    """
    image = np.asarray(image, dtype=float)
    if image.shape != (28, 28):
        raise IdxError(f"expected a 28x28 image, got {image.shape}")
    if image.min() < 0 or image.max() > 1:
        raise IdxError("pixel values must lie in [0, 1]")
    padded = np.zeros((32, 32))
    padded[2:30, 2:30] = image
    pooled = padded.reshape(8, 4, 8, 4).mean(axis=(1, 3))
    flat = pooled.reshape(64)
    norm = np.linalg.norm(flat)
    if norm < 1e-12:
        raise IdxError("all-zero image cannot be normalized")
    return (flat / norm).astype(complex)


def load_mnist64(image_path, label_path, limit: int | None = None):
    """Prepared (inputs, one-hot labels) arrays for the 64-mode mesh."""
    images = load_idx_images(image_path)
    labels = load_idx_labels(label_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxError("image/label count mismatch")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    inputs = np.stack([mnist64_preprocess(im) for im in images])
    onehot = np.zeros((labels.size, 10))
    onehot[np.arange(labels.size), labels] = 1.0
    return inputs, onehot
