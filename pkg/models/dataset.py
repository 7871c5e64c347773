"""
MNIST Dataset
IDX container parsing, the immutable LabeledDataset, and seeded labeled-subset sampling.
"""

import gzip
import logging
import struct
from enum import Enum
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from models.errors import CountMismatchError, IdxFormatError, SubsetError, TruncatedFileError
from models.schemas import SubsetSpec

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
NUM_CLASSES = 10


class DatasetSplit(str, Enum):
    """Which half of MNIST a dataset came from."""
    TRAIN = "train"
    TEST = "test"


class LabeledDataset:
    """
    Images in [0, 1] with their class ids. Arrays are read-only, so one instance
    can be shared between threads.

    Attributes:
        images (np.ndarray): float32 array (count, 28, 28)
        labels (np.ndarray): uint8 array (count,) with values in 0..9
        split (DatasetSplit): train or test
        indices (np.ndarray): positions of these items in the source file
    """

    def __init__(self, images: np.ndarray, labels: np.ndarray, split: DatasetSplit,
                 indices: Optional[np.ndarray] = None):
        if len(images) != len(labels):
            raise CountMismatchError(f"{len(images)} images but {len(labels)} labels")
        self.images = np.asarray(images, dtype=np.float32)
        self.labels = np.asarray(labels, dtype=np.uint8)
        self.split = DatasetSplit(split)
        self.indices = np.arange(len(labels)) if indices is None else np.asarray(indices, dtype=np.int64)
        for array in (self.images, self.labels, self.indices):
            array.flags.writeable = False

    @property
    def count(self) -> int:
        return int(self.labels.shape[0])

    def __len__(self) -> int:
        return self.count

    def take(self, positions: np.ndarray) -> "LabeledDataset":
        """Dataset made of the items at the given positions (in that order)."""
        positions = np.asarray(positions, dtype=np.int64)
        return LabeledDataset(self.images[positions], self.labels[positions], self.split,
                              self.indices[positions])

    def head(self, n: Optional[int]) -> "LabeledDataset":
        """First n items in file order (the whole dataset when n is None)."""
        if n is None or n >= self.count:
            return self
        return self.take(np.arange(n))

    def flat(self) -> np.ndarray:
        """Images as (count, 784) vectors."""
        return self.images.reshape(self.count, -1)

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=NUM_CLASSES)

    def to_dict(self) -> Dict:
        """Summary for logs and reports."""
        return {
            "split": self.split.value,
            "count": self.count,
            "image_shape": list(self.images.shape[1:]),
            "class_histogram": self.class_histogram().tolist(),
        }

    def __repr__(self) -> str:
        return f"LabeledDataset(split={self.split.value}, count={self.count})"


def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_header(f, path: Path, expected_magic: int, ndims: int):
    raw = f.read(4 + 4 * ndims)
    if len(raw) < 4 + 4 * ndims:
        raise TruncatedFileError(f"{path}: header is {len(raw)} bytes, expected {4 + 4 * ndims}")
    magic, *dims = struct.unpack(">I" + "I" * ndims, raw)
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    return dims


def read_idx_images(path: Union[str, Path]) -> np.ndarray:
    """Raw uint8 image array (count, rows, cols) from an IDX3 file."""
    path = Path(path)
    with _open(path) as f:
        count, rows, cols = _read_header(f, path, IMAGES_MAGIC, 3)
        payload = f.read()
    expected = count * rows * cols
    if len(payload) < expected:
        raise TruncatedFileError(f"{path}: {len(payload)} pixel bytes, header announces {expected}")
    return np.frombuffer(payload[:expected], dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path: Union[str, Path]) -> np.ndarray:
    """Raw uint8 label array (count,) from an IDX1 file."""
    path = Path(path)
    with _open(path) as f:
        (count,) = _read_header(f, path, LABELS_MAGIC, 1)
        payload = f.read()
    if len(payload) < count:
        raise TruncatedFileError(f"{path}: {len(payload)} label bytes, header announces {count}")
    labels = np.frombuffer(payload[:count], dtype=np.uint8)
    if labels.size and labels.max() >= NUM_CLASSES:
        raise IdxFormatError(f"{path}: label {int(labels.max())} outside 0..{NUM_CLASSES - 1}")
    return labels


def load_idx(images_path: Union[str, Path], labels_path: Union[str, Path],
             split: DatasetSplit = DatasetSplit.TRAIN) -> LabeledDataset:
    """
    Load an MNIST image/label IDX pair (plain or .gz).

    Pixels are divided by 255 into [0, 1]; file order is preserved.

    Raises:
        IdxFormatError: wrong magic number
        TruncatedFileError: payload shorter than the header says
        CountMismatchError: image and label counts differ
    """
    raw_images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if raw_images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images_path} holds {raw_images.shape[0]} images but {labels_path} holds {labels.shape[0]} labels")
    images = raw_images.astype(np.float32) / np.float32(255.0)
    dataset = LabeledDataset(images, labels, split)
    logger.info("✓ Loaded %d %s images from %s", dataset.count, dataset.split.value, images_path)
    return dataset


def subset_size(fraction: float, total: int) -> int:
    """round(fraction * total) with halves rounded up."""
    return int(np.floor(fraction * total + 0.5))


def _stratified_positions(labels: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    # Largest-remainder quotas so the total still equals size; ties go to the lower class id.
    counts = np.bincount(labels, minlength=NUM_CLASSES)
    quotas = counts * (size / labels.size)
    base = np.floor(quotas).astype(np.int64)
    remainder = size - int(base.sum())
    order = np.lexsort((np.arange(NUM_CLASSES), -(quotas - base)))
    base[order[:remainder]] += 1
    picked = []
    for cls in range(NUM_CLASSES):
        members = np.flatnonzero(labels == cls)
        if base[cls]:
            picked.append(rng.choice(members, size=base[cls], replace=False))
    positions = np.concatenate(picked) if picked else np.empty(0, dtype=np.int64)
    return rng.permutation(positions)


def sample_subset(ds: LabeledDataset, spec: SubsetSpec) -> LabeledDataset:
    """
    Draw round(fraction * N) distinct items, uniformly without replacement.

    The same (dataset, spec) always yields the same items in the same order.
    With spec.stratified the per-class counts follow the class proportions instead.

    Raises:
        SubsetError: fraction outside (0, 1] or a subset that rounds to zero items
    """
    if not (0.0 < spec.fraction <= 1.0):
        raise SubsetError(f"fraction must be in (0, 1], got {spec.fraction}")
    size = subset_size(spec.fraction, ds.count)
    if size == 0:
        raise SubsetError(f"fraction {spec.fraction} of {ds.count} items rounds to an empty subset")

    rng = np.random.default_rng(spec.seed)
    if spec.stratified:
        positions = _stratified_positions(np.asarray(ds.labels), size, rng)
    else:
        positions = rng.choice(ds.count, size=size, replace=False)
    return ds.take(positions)
