"""
Neuron Labeling and Evaluation
Few-label post-labeling of a trained SOM (accumulate normalized activations per class,
normalize by class counts, take the argmax) and nearest-labeled-neuron classification.
"""

import logging
from typing import Dict, Optional, Tuple

import numpy as np

from models.errors import DimensionMismatchError, EmptyInputError, UnlabeledGridError
from models.som import SomGrid, best_matching_units
from utils.containers import read_container, write_container

logger = logging.getLogger(__name__)

NUM_CLASSES = 10
UNLABELED = -1
LABELS_KIND = "neuron_labels"


class ClassAccumulators:
    """
    Per-neuron class accumulators of the labeling phase.

    Attributes:
        mass (np.ndarray): float64 (k, num_classes), accumulated normalized activity
        counts (np.ndarray): int64 (num_classes,), labeling samples seen per class
    """

    def __init__(self, k: int, num_classes: int = NUM_CLASSES):
        self.mass = np.zeros((k, num_classes), dtype=np.float64)
        self.counts = np.zeros(num_classes, dtype=np.int64)

    @property
    def samples(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ClassAccumulators") -> "ClassAccumulators":
        """Sum of two partial accumulations (accumulation is order independent)."""
        merged = ClassAccumulators(*self.mass.shape)
        merged.mass = self.mass + other.mass
        merged.counts = self.counts + other.counts
        return merged


def normalized_activations(grid: SomGrid, v: np.ndarray, alpha: float) -> np.ndarray:
    """a_n / a_BMU for every neuron, computed as exp((d_BMU - d_n) / alpha)."""
    d = grid.distances(v)
    return np.exp((d.min() - d) / alpha)


def accumulate(grid: SomGrid, sample: Tuple[np.ndarray, int], alpha: float,
               acc: ClassAccumulators) -> ClassAccumulators:
    """
    Add one labeled sample: every neuron accumulates its activation relative to the BMU
    into the sample's class (the BMU contributes exactly 1).
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    v, cls = sample
    acc.mass[:, int(cls)] += normalized_activations(grid, v, alpha)
    acc.counts[int(cls)] += 1
    return acc


def accumulate_all(grid: SomGrid, vectors: np.ndarray, classes: np.ndarray, alpha: float,
                   acc: Optional[ClassAccumulators] = None) -> ClassAccumulators:
    """Run accumulate over a whole labeling subset."""
    if len(vectors) != len(classes):
        raise DimensionMismatchError(f"{len(vectors)} vectors but {len(classes)} classes")
    acc = acc or ClassAccumulators(grid.k)
    for v, cls in zip(np.asarray(vectors, dtype=np.float64), classes):
        accumulate(grid, (v, int(cls)), alpha, acc)
    return acc


def assign_labels(acc: ClassAccumulators) -> np.ndarray:
    """
    Normalize each class accumulator by its sample count and label every neuron
    with the argmax class (lowest class id on ties).

    Classes with no labeling sample keep zero mass; neurons whose accumulators are
    all zero get UNLABELED.

    Raises:
        EmptyInputError: no labeling sample was accumulated
    """
    if acc.samples == 0:
        raise EmptyInputError("labeling needs at least one labeled sample")
    present = acc.counts > 0
    normalized = np.zeros_like(acc.mass)
    normalized[:, present] = acc.mass[:, present] / acc.counts[present]
    labels = np.argmax(normalized, axis=1).astype(np.int64)
    labels[~np.any(normalized > 0, axis=1)] = UNLABELED
    return labels


def label_grid(grid: SomGrid, vectors: np.ndarray, classes: np.ndarray, alpha: float) -> np.ndarray:
    """All five labeling steps for a labeling subset."""
    labels = assign_labels(accumulate_all(grid, vectors, classes, alpha))
    logger.info("✓ Labeled %d/%d neurons from %d samples",
                int(np.sum(labels != UNLABELED)), grid.k, len(classes))
    return labels


def _labeled_mask(grid: SomGrid, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (grid.k,):
        raise DimensionMismatchError(f"{labels.shape[0]} labels for a grid of {grid.k} neurons")
    mask = labels != UNLABELED
    if not mask.any():
        raise UnlabeledGridError("every neuron is unlabeled")
    return mask


def classify(grid: SomGrid, labels: np.ndarray, v: np.ndarray) -> int:
    """Label of the best matching unit among labeled neurons only."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (grid.dim,):
        raise DimensionMismatchError(f"input of shape {v.shape}, grid dimension is {grid.dim}")
    return int(predict(grid, labels, v[None, :])[0])


def predict(grid: SomGrid, labels: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """
    classify for a batch of vectors; both go through best_matching_units, so a vector
    gets the same label alone or in a batch.
    """
    mask = _labeled_mask(grid, labels)
    vectors = np.asarray(vectors)
    if vectors.ndim != 2 or vectors.shape[1] != grid.dim:
        raise DimensionMismatchError(f"vectors of shape {vectors.shape} for grid dimension {grid.dim}")
    labeled = np.flatnonzero(mask)
    return np.asarray(labels)[labeled[best_matching_units(vectors, grid.weights[labeled])]]


def evaluate(grid: SomGrid, labels: np.ndarray, vectors: np.ndarray, targets: np.ndarray) -> float:
    """
    Fraction of test vectors whose predicted class equals the true label.

    Raises:
        EmptyInputError: empty test set
    """
    if len(vectors) == 0:
        raise EmptyInputError("cannot evaluate on an empty test set")
    if len(vectors) != len(targets):
        raise DimensionMismatchError(f"{len(vectors)} vectors but {len(targets)} targets")
    predictions = predict(grid, labels, vectors)
    return float(np.mean(predictions == np.asarray(targets)))


# ==================== LABEL TABLE ====================

def save_labels(path, labels: np.ndarray, meta: Optional[Dict] = None):
    """Export the neuron-index -> label table."""
    return write_container(path, LABELS_KIND, {"labels": np.asarray(labels, dtype=np.int16)}, meta or {})


def load_labels(path) -> np.ndarray:
    arrays, _ = read_container(path, LABELS_KIND)
    return arrays["labels"].astype(np.int64)
