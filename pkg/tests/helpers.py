"""Shared fixtures for the test suite."""

import numpy as np

from favit.data import write_cifar10_batch


def two_class_images(count: int, seed: int) -> tuple:
    """Synthetic 32x32 color/position dataset in CIFAR range.

    Class 0 images carry a warm (red-dominant) square on a gray
    background, class 1 a cold (blue-dominant) one.  Position, size,
    background level, and pixel noise all vary, so the classes are only
    separable through color composition, which survives pooling.
    """
    rng = np.random.default_rng(seed)
    images = np.zeros((count, 32, 32, 3), dtype=np.uint8)
    labels = np.zeros(count, dtype=np.int64)
    for i in range(count):
        label = int(rng.integers(0, 2))
        bg = rng.uniform(0.15, 0.35)
        img = np.full((32, 32, 3), bg)
        side = int(rng.integers(10, 17))
        top = int(rng.integers(0, 32 - side))
        left = int(rng.integers(0, 32 - side))
        strong = rng.uniform(0.7, 0.95)
        weak = rng.uniform(0.05, 0.25)
        color = (strong, weak, weak) if label == 0 else (weak, weak, strong)
        img[top:top + side, left:left + side] = color
        img += rng.normal(0.0, 0.02, img.shape)
        images[i] = (np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
        labels[i] = label
    return images, labels


def write_two_class_cifar(dirpath, n_train: int = 500, n_test: int = 200,
                          seed: int = 7) -> None:
    """Write the synthetic 2-class set as CIFAR-10 binary batches."""
    train_images, train_labels = two_class_images(n_train, seed)
    test_images, test_labels = two_class_images(n_test, seed + 1)
    write_cifar10_batch(dirpath / "data_batch_1.bin", train_images, train_labels)
    write_cifar10_batch(dirpath / "test_batch.bin", test_images, test_labels)
