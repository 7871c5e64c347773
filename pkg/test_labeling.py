"""
Tests for neuron labeling, classification and evaluation.
"""

import numpy as np
import pytest

from models.errors import EmptyInputError, UnlabeledGridError
from models.labeling import (
    UNLABELED,
    ClassAccumulators,
    accumulate,
    accumulate_all,
    assign_labels,
    classify,
    evaluate,
    label_grid,
    load_labels,
    predict,
    save_labels,
)
from models.som import SomGrid


def brute_force_labels(weights, vectors, classes, alpha):
    """Independent labeling: per class, mean over its samples of a_n / a_BMU; argmax per neuron."""
    k = len(weights)
    totals = np.zeros((k, 10))
    counts = np.zeros(10)
    for v, c in zip(vectors, classes):
        acts = np.array([np.exp(-np.linalg.norm(v - w) / alpha) for w in weights])
        totals[:, c] += acts / acts.max()
        counts[c] += 1
    labels = []
    for n in range(k):
        scores = [totals[n, c] / counts[c] if counts[c] else 0.0 for c in range(10)]
        best = int(np.argmax(scores))
        labels.append(best if scores[best] > 0 else UNLABELED)
    return np.array(labels)


def test_labeling_matches_brute_force():
    rng = np.random.default_rng(0)
    for trial in range(50):
        grid = SomGrid.create(3, 3, 4, seed=trial)
        n = int(rng.integers(1, 30))
        vectors = rng.random((n, 4))
        classes = rng.integers(0, 10, size=n)
        np.testing.assert_array_equal(label_grid(grid, vectors, classes, 1.0),
                                      brute_force_labels(grid.weights, vectors, classes, 1.0))


def test_bmu_accumulates_exactly_one():
    grid = SomGrid.create(2, 2, 3, seed=1)
    v = np.array([0.2, 0.4, 0.6])
    acc = accumulate(grid, (v, 3), 1.0, ClassAccumulators(grid.k))
    assert acc.mass[grid.winner(v), 3] == pytest.approx(1.0)
    assert np.all(acc.mass[:, 3] <= 1.0)
    assert acc.counts[3] == 1 and acc.samples == 1


def test_accumulation_is_order_independent():
    rng = np.random.default_rng(4)
    grid = SomGrid.create(3, 3, 5, seed=2)
    vectors, classes = rng.random((20, 5)), rng.integers(0, 10, 20)
    whole = accumulate_all(grid, vectors, classes, 1.0)
    parts = accumulate_all(grid, vectors[:7], classes[:7], 1.0).merge(
        accumulate_all(grid, vectors[7:], classes[7:], 1.0))
    np.testing.assert_allclose(whole.mass, parts.mass)
    np.testing.assert_array_equal(whole.counts, parts.counts)


def test_class_counts_are_normalized():
    # one neuron; class 0 seen 3 times with activity 0.5, class 1 seen once with 1.0
    acc = ClassAccumulators(1)
    acc.mass[0, 0], acc.counts[0] = 1.5, 3
    acc.mass[0, 1], acc.counts[1] = 1.0, 1
    assert assign_labels(acc)[0] == 1


def test_all_zero_accumulators_stay_unlabeled():
    acc = ClassAccumulators(3)
    acc.mass[0, 2], acc.counts[2] = 1.0, 1
    labels = assign_labels(acc)
    assert labels[0] == 2
    assert list(labels[1:]) == [UNLABELED, UNLABELED]


def test_empty_labeling_subset_is_an_error():
    with pytest.raises(EmptyInputError):
        assign_labels(ClassAccumulators(4))


def test_classify_ignores_unlabeled_neurons():
    grid = SomGrid(2, 1, np.array([[0.0, 0.0], [1.0, 1.0]]))
    labels = np.array([UNLABELED, 7])
    assert classify(grid, labels, np.array([0.0, 0.0])) == 7
    with pytest.raises(UnlabeledGridError):
        classify(grid, np.array([UNLABELED, UNLABELED]), np.zeros(2))


def test_predict_agrees_with_classify():
    rng = np.random.default_rng(5)
    grid = SomGrid.create(4, 4, 6, seed=3)
    labels = rng.integers(-1, 10, size=16)
    labels[0] = 2
    vectors = rng.random((40, 6))
    expected = [classify(grid, labels, v) for v in vectors]
    np.testing.assert_array_equal(predict(grid, labels, vectors), expected)


def test_near_tie_gets_the_same_label_alone_and_in_a_batch():
    rng = np.random.default_rng(12)
    x = 1e4 + rng.random(64)
    far, near = x.copy(), x.copy()
    far[0] += 1.0001e-3
    near[1] += 1e-3
    grid = SomGrid(2, 1, np.stack([far, near]))
    labels = np.array([3, 8])
    assert classify(grid, labels, x) == 8
    np.testing.assert_array_equal(predict(grid, labels, np.stack([x, far])), [8, 3])


def test_evaluate_accuracy():
    grid = SomGrid(2, 1, np.array([[0.0, 0.0], [1.0, 1.0]]))
    labels = np.array([0, 1])
    vectors = np.array([[0.1, 0.0], [0.9, 1.0], [0.8, 0.9], [0.0, 0.2]])
    assert evaluate(grid, labels, vectors, np.array([0, 1, 0, 0])) == pytest.approx(0.75)
    with pytest.raises(EmptyInputError):
        evaluate(grid, labels, np.empty((0, 2)), np.empty(0))


def test_label_table_roundtrip(tmp_path):
    labels = np.array([3, UNLABELED, 9, 0])
    path = save_labels(tmp_path / "labels", labels, {"seed": 1})
    np.testing.assert_array_equal(load_labels(path), labels)
