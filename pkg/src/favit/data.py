"""Dataset ingestion: CIFAR-10 binary batches and Fashion-MNIST IDX.

Loaders return DatasetSplit values with float32 images in [0, 1],
shape (count, H, W, 3).  Grayscale sources are replicated to three
channels.  Matching writers exist so tests can synthesize files in the
exact on-disk formats.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .imaging import resize_nearest

CIFAR_RECORD = 3073  # 1 label byte + 3 * 1024 pixel bytes
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class DatasetSplit:
    images: np.ndarray  # (count, H, W, 3) float32 in [0, 1]
    labels: np.ndarray  # (count,) int64
    classes: int
    split: str

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataError("image count does not match label count")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.classes):
            raise DataError("labels out of range for class count")

    def __len__(self):
        return self.images.shape[0]


def _parse_cifar_batch(path) -> tuple:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) == 0:
        raise DataError(f"empty CIFAR batch file: {path}")
    if len(raw) % CIFAR_RECORD:
        raise DataError(
            f"CIFAR batch size {len(raw)} is not a multiple of {CIFAR_RECORD}: {path}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise DataError(f"CIFAR label above 9 in {path}")
    pixels = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    images = pixels.astype(np.float32) / 255.0
    return images, labels


def load_cifar10(path) -> tuple:
    """(train, test) DatasetSplit pair from a CIFAR-10 binary directory."""
    if not os.path.isdir(path):
        raise DataError(f"not a directory: {path}")
    train_files = sorted(
        f for f in os.listdir(path)
        if f.startswith("data_batch") and f.endswith(".bin"))
    if not train_files:
        raise DataError(f"no data_batch*.bin files in {path}")
    test_file = os.path.join(path, "test_batch.bin")
    if not os.path.exists(test_file):
        raise DataError(f"missing test_batch.bin in {path}")
    parts = [_parse_cifar_batch(os.path.join(path, f)) for f in train_files]
    train = DatasetSplit(np.concatenate([p[0] for p in parts]),
                         np.concatenate([p[1] for p in parts]), 10, "train")
    timg, tlab = _parse_cifar_batch(test_file)
    test = DatasetSplit(timg, tlab, 10, "test")
    return train, test


def write_cifar10_batch(path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 (count, 32, 32, 3) images in the CIFAR-10 batch format."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.dtype != np.uint8 or images.shape[1:] != (32, 32, 3):
        raise DataError("expected uint8 (count, 32, 32, 3) images")
    planes = images.transpose(0, 3, 1, 2).reshape(len(images), 3072)
    with open(path, "wb") as f:
        for lab, px in zip(labels, planes):
            f.write(struct.pack("B", int(lab)))
            f.write(px.tobytes())


def _open_maybe_gz(path):
    if os.path.exists(path):
        return open(path, "rb")
    gz = str(path) + ".gz"
    if os.path.exists(gz):
        return gzip.open(gz, "rb")
    raise DataError(f"missing file: {path}")


def _read_idx(path, expect_magic: int) -> np.ndarray:
    with _open_maybe_gz(path) as f:
        head = f.read(4)
        if len(head) != 4:
            raise DataError(f"truncated IDX header: {path}")
        (magic,) = struct.unpack(">I", head)
        if magic != expect_magic:
            raise DataError(
                f"bad IDX magic 0x{magic:08x} in {path}, expected 0x{expect_magic:08x}")
        ndim = magic & 0xFF
        dims = []
        for _ in range(ndim):
            raw = f.read(4)
            if len(raw) != 4:
                raise DataError(f"truncated IDX extents: {path}")
            dims.append(struct.unpack(">I", raw)[0])
        count = int(np.prod(dims, dtype=np.int64))
        payload = f.read(count)
        if len(payload) != count:
            raise DataError(f"truncated IDX payload: {path}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def _load_idx_pair(img_path, lab_path, split: str) -> DatasetSplit:
    images = _read_idx(img_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(lab_path, IDX_LABELS_MAGIC).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise DataError(
            f"IDX extent mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    rgb = np.repeat(images[:, :, :, None], 3, axis=3).astype(np.float32) / 255.0
    return DatasetSplit(rgb, labels, 10, split)


def load_fashion_mnist(path) -> tuple:
    """(train, test) DatasetSplit pair from a Fashion-MNIST IDX directory."""
    if not os.path.isdir(path):
        raise DataError(f"not a directory: {path}")
    join = lambda name: os.path.join(path, name)
    train = _load_idx_pair(join("train-images-idx3-ubyte"),
                           join("train-labels-idx1-ubyte"), "train")
    test = _load_idx_pair(join("t10k-images-idx3-ubyte"),
                          join("t10k-labels-idx1-ubyte"), "test")
    return train, test


def write_idx_images(path, images: np.ndarray) -> None:
    """Write uint8 (count, rows, cols) grayscale images as IDX."""
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise DataError("expected (count, rows, cols) grayscale images")
    with open(path, "wb") as f:
        f.write(struct.pack(">I", IDX_IMAGES_MAGIC))
        for extent in images.shape:
            f.write(struct.pack(">I", extent))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">I", IDX_LABELS_MAGIC))
        f.write(struct.pack(">I", labels.shape[0]))
        f.write(labels.tobytes())


def prepare_image(image: np.ndarray, size: int) -> np.ndarray:
    """Fit one (H, W, 3) image onto a size x size canvas.

    Images at the target size pass through; others are resized with
    nearest-neighbor so the long side fits, then center-embedded.
    """
    img = np.asarray(image)
    h, w = img.shape[:2]
    if (h, w) == (size, size):
        return img
    scl = size / max(h, w)
    nh = max(1, int(round(h * scl)))
    nw = max(1, int(round(w * scl)))
    small = resize_nearest(img, nh, nw)
    canvas = np.zeros((size, size) + img.shape[2:], dtype=small.dtype)
    top = (size - nh) // 2
    left = (size - nw) // 2
    canvas[top:top + nh, left:left + nw] = small
    return canvas


def prepare_split(split: DatasetSplit, size: int) -> DatasetSplit:
    """Resize or pad every image in a split to the model's input size."""
    if split.images.shape[1] == size and split.images.shape[2] == size:
        return split
    images = np.stack([prepare_image(im, size) for im in split.images])
    return DatasetSplit(images, split.labels, split.classes, split.split)
