"""
Shared pytest fixtures: tiny synthetic IDX files so no MNIST download is needed.
"""

import os
import struct
from pathlib import Path

import numpy as np
import pytest

from models.schemas import DataConfig


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running checks; the full-MNIST ones also need MNIST_DIR")


def write_idx_images(path: Path, images: np.ndarray, magic: int = 0x00000803) -> Path:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    path.write_bytes(struct.pack(">IIII", magic, n, rows, cols) + images.tobytes())
    return path


def write_idx_labels(path: Path, labels: np.ndarray, magic: int = 0x00000801) -> Path:
    labels = np.asarray(labels, dtype=np.uint8)
    path.write_bytes(struct.pack(">II", magic, labels.size) + labels.tobytes())
    return path


def synthetic_digits(count: int, seed: int):
    """Class c is a bright horizontal bar at row 3 + 2c over faint noise."""
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(count) % 10).astype(np.uint8)
    images = rng.integers(0, 30, size=(count, 28, 28)).astype(np.uint8)
    for i, c in enumerate(labels):
        row = 3 + 2 * int(c)
        start = int(rng.integers(2, 6))
        images[i, row:row + 2, start:start + 20] = 255
    return images, labels


@pytest.fixture
def mnist_files(tmp_path) -> DataConfig:
    """DataConfig pointing at 300 synthetic training and 100 synthetic test items."""
    train_x, train_y = synthetic_digits(300, seed=1)
    test_x, test_y = synthetic_digits(100, seed=2)
    return DataConfig(
        train_images=str(write_idx_images(tmp_path / "train-images-idx3-ubyte", train_x)),
        train_labels=str(write_idx_labels(tmp_path / "train-labels-idx1-ubyte", train_y)),
        test_images=str(write_idx_images(tmp_path / "t10k-images-idx3-ubyte", test_x)),
        test_labels=str(write_idx_labels(tmp_path / "t10k-labels-idx1-ubyte", test_y)),
    )


@pytest.fixture
def mnist_dir() -> Path:
    """Directory holding the real MNIST IDX files; skips the test when MNIST_DIR is unset."""
    directory = os.environ.get("MNIST_DIR")
    if not directory:
        pytest.skip("MNIST_DIR not set")
    return Path(directory)
