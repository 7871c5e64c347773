"""
Tests for the SOM: activity, winner election, neighborhood, schedules, updates,
training determinism and checkpoints.
"""

import math

import numpy as np
import pytest

from models.errors import ContainerError, DimensionMismatchError, EmptyInputError
from models.schemas import SomHyperParams
from models.som import (
    SomGrid,
    activity,
    batch_sq_distances,
    best_matching_units,
    elect_winner,
    load_grid,
    neighborhood,
    save_grid,
    schedule,
    squarest_shape,
    train,
    update_weights,
)


def test_activity_values():
    assert activity([0.0, 0.0], [0.0, 0.0], 1.0) == 1.0
    assert activity([3.0, 4.0], [0.0, 0.0], 1.0) == pytest.approx(math.exp(-5.0))
    assert activity([3.0, 4.0], [0.0, 0.0], 5.0) == pytest.approx(math.exp(-1.0))


def test_activity_rejects_mismatched_dimensions():
    with pytest.raises(DimensionMismatchError):
        activity([1.0, 2.0], [1.0, 2.0, 3.0], 1.0)


def test_elect_winner_ties_go_to_lowest_index():
    assert elect_winner([0.2, 0.9, 0.9, 0.1]) == 1
    with pytest.raises(EmptyInputError):
        elect_winner([])


def test_winner_is_brute_force_nearest_neighbor():
    rng = np.random.default_rng(0)
    for i in range(100):
        grid = SomGrid.create(3, 1, 5, seed=i)
        v = rng.random(5)
        brute = min(range(3), key=lambda n: (np.linalg.norm(v - grid.weights[n]), n))
        assert grid.winner(v) == brute
        assert elect_winner(grid.activities(v, 1.0)) == brute


def test_neighborhood_values():
    assert neighborhood((2, 3), (2, 3), 0.5) == 1.0
    assert neighborhood((0, 0), (0, 1), 1.0) == pytest.approx(math.exp(-0.5))
    assert neighborhood((0, 0), (3, 4), 10.0) == pytest.approx(math.exp(-25.0 / 200.0))


def test_schedule_endpoints_are_exact():
    assert schedule(1.0, 0.01, 0, 10) == 1.0
    assert schedule(1.0, 0.01, 10, 10) == 0.01
    assert schedule(10.0, 0.01, 5, 10) == pytest.approx(10.0 * (0.001 ** 0.5))
    with pytest.raises(ValueError):
        schedule(1.0, 0.01, 0, 0)


def test_update_contracts_towards_input():
    grid = SomGrid.create(4, 4, 6, seed=1)
    v = np.random.default_rng(2).random(6)
    before = grid.weights.copy()
    s = grid.winner(v)
    update_weights(grid, v, s, 0.5, 2.0)
    assert np.all(np.abs(v - grid.weights) <= np.abs(v - before) + 1e-12)
    # the winner moves by exactly epsilon
    np.testing.assert_allclose(grid.weights[s], before[s] + 0.5 * (v - before[s]))


def test_update_with_full_rate_and_tiny_sigma_copies_input_into_winner_only():
    grid = SomGrid.create(3, 3, 4, seed=0)
    before = grid.weights.copy()
    v = np.full(4, 0.5)
    update_weights(grid, v, 4, 1.0, 1e-3)
    np.testing.assert_allclose(grid.weights[4], v)
    others = [n for n in range(9) if n != 4]
    np.testing.assert_allclose(grid.weights[others], before[others])


def test_squarest_shape():
    assert squarest_shape(256) == (16, 16)
    assert squarest_shape(64) == (8, 8)
    assert squarest_shape(12) == (4, 3)
    assert squarest_shape(7) == (7, 1)


def test_grid_positions_and_validation():
    grid = SomGrid.create(4, 2, 3, seed=0)
    assert grid.k == 8
    assert tuple(grid.positions[5]) == (1, 1)
    assert grid.weights.min() >= 0 and grid.weights.max() <= 1
    with pytest.raises(DimensionMismatchError):
        SomGrid(4, 2, np.zeros((7, 3)))
    with pytest.raises(DimensionMismatchError):
        grid.distances(np.zeros(4))


def test_batch_distances_match_direct_computation():
    rng = np.random.default_rng(3)
    data, weights = rng.random((20, 7)), rng.random((9, 7))
    direct = ((data[:, None, :] - weights[None, :, :]) ** 2).sum(axis=2)
    np.testing.assert_allclose(batch_sq_distances(data, weights, chunk=6), direct, atol=1e-12)


def _clusters(seed=0):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.1, 0.1], [0.9, 0.1], [0.1, 0.9], [0.9, 0.9]])
    return np.concatenate([c + 0.02 * rng.standard_normal((50, 2)) for c in centers])


def test_training_is_deterministic_and_leaves_input_untouched():
    data = _clusters()
    grid = SomGrid.create(3, 3, 2, seed=7)
    initial = grid.weights.copy()
    hp = SomHyperParams(epochs=3)
    a = train(grid, data, hp, seed=11)
    b = train(grid, data, hp, seed=11)
    c = train(grid, data, hp, seed=12)
    np.testing.assert_array_equal(a.weights, b.weights)
    assert not np.array_equal(a.weights, c.weights)
    np.testing.assert_array_equal(grid.weights, initial)


def test_training_reduces_quantization_error():
    data = _clusters()
    grid = SomGrid.create(2, 2, 2, seed=0)
    trained = train(grid, data, SomHyperParams(epochs=5), seed=0)
    assert trained.quantization_error(data) < grid.quantization_error(data)


def test_repeated_vector_pulls_its_winner_onto_it():
    v = np.array([0.2, 0.7, 0.4, 0.9])
    grid = SomGrid.create(3, 3, 4, seed=1)
    hp = SomHyperParams(epsilon_i=0.5, epsilon_f=0.05, sigma_i=1.0, sigma_f=0.1, epochs=5)
    trained = train(grid, np.tile(v, (20, 1)), hp, seed=2)
    assert np.linalg.norm(trained.weights[trained.winner(v)] - v) < 1e-3


def test_two_clusters_split_across_a_two_neuron_grid():
    rng = np.random.default_rng(4)
    means = np.array([[0.15, 0.2], [0.85, 0.8]])
    data = np.concatenate([m + 0.03 * rng.standard_normal((50, 2)) for m in means])
    hp = SomHyperParams(epsilon_i=0.5, epsilon_f=0.01, sigma_i=0.5, sigma_f=0.1, epochs=10)
    trained = train(SomGrid.create(2, 1, 2, seed=0), data, hp, seed=3)
    winners = [trained.winner(m) for m in means]
    assert winners[0] != winners[1]
    for m, s in zip(means, winners):
        assert np.linalg.norm(trained.weights[s] - m) < 0.1


def test_winner_does_not_depend_on_alpha():
    rng = np.random.default_rng(8)
    grid = SomGrid.create(4, 4, 8, seed=9)
    for _ in range(20):
        v = rng.random(8)
        winners = {elect_winner(grid.activities(v, a)) for a in (0.1, 1.0, 10.0, 100.0)}
        assert winners == {grid.winner(v)}


def test_zero_learning_rate_leaves_grid_untouched():
    grid = SomGrid.create(3, 2, 5, seed=2)
    before = grid.weights.tobytes()
    update_weights(grid, np.full(5, 3.0), 4, 0.0, 2.0)
    assert grid.weights.tobytes() == before


def test_single_precision_data_trains_like_double():
    data = _clusters(1).astype(np.float32)
    grid = SomGrid.create(3, 3, 2, seed=5)
    hp = SomHyperParams(epochs=2)
    a = train(grid, data, hp, seed=6)
    b = train(grid, data.astype(np.float64), hp, seed=6)
    np.testing.assert_array_equal(a.weights, b.weights)
    assert a.quantization_error(data) == pytest.approx(b.quantization_error(data.astype(np.float64)))


def test_best_matching_units_match_exact_argmin():
    rng = np.random.default_rng(10)
    weights = rng.random((12, 6))
    weights[7] = weights[3]
    data = np.concatenate([rng.random((40, 6)), weights[[3, 7]]])
    exact = np.argmin(((data[:, None, :] - weights[None, :, :]) ** 2).sum(axis=2), axis=1)
    np.testing.assert_array_equal(best_matching_units(data, weights, chunk=9), exact)
    assert best_matching_units(weights[[7]], weights)[0] == 3


def test_best_matching_units_settle_near_ties_exactly():
    rng = np.random.default_rng(11)
    x = 1e4 + rng.random(64)
    far, near = x.copy(), x.copy()
    far[0] += 1.0001e-3
    near[1] += 1e-3
    assert best_matching_units(x[None, :], np.stack([far, near]))[0] == 1


def test_training_input_errors():
    grid = SomGrid.create(2, 2, 3, seed=0)
    with pytest.raises(EmptyInputError):
        train(grid, np.empty((0, 3)), SomHyperParams(), seed=0)
    with pytest.raises(DimensionMismatchError):
        train(grid, np.zeros((5, 4)), SomHyperParams(), seed=0)


def test_hyper_params_reject_growing_schedules():
    with pytest.raises(ValueError):
        SomHyperParams(epsilon_i=1.0, epsilon_f=10.0)
    with pytest.raises(ValueError):
        SomHyperParams(sigma_i=0.01, sigma_f=10.0)


def test_grid_checkpoint_roundtrip(tmp_path):
    grid = SomGrid.create(4, 3, 5, seed=9)
    labels = np.array([0, 1, 2, -1, 4, 5, 6, 7, 8, 9, 0, 1])
    path = save_grid(tmp_path / "grid", grid, SomHyperParams(epochs=2), labels, {"extractor": "raw"})
    loaded, hp, loaded_labels, meta = load_grid(path)
    np.testing.assert_array_equal(loaded.weights, grid.weights)
    assert (loaded.width, loaded.height, loaded.seed) == (4, 3, 9)
    assert hp.epochs == 2
    np.testing.assert_array_equal(loaded_labels, labels)
    assert meta["extractor"] == "raw"


def test_loading_wrong_container_kind(tmp_path):
    from models.labeling import save_labels
    path = save_labels(tmp_path / "labels", np.zeros(4, dtype=int))
    with pytest.raises(ContainerError):
        load_grid(path)
    with pytest.raises(ContainerError):
        load_grid(tmp_path / "missing.npz")
