"""
Self-Organizing Map
Gaussian activity, winner election, Gaussian neighborhood, online weight updates and
exponentially decaying learning-rate / neighborhood schedules.
"""

import logging
import time
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from models.errors import DimensionMismatchError, EmptyInputError
from models.schemas import SomHyperParams
from utils.containers import read_container, write_container

logger = logging.getLogger(__name__)

GRID_KIND = "som_grid"


def squarest_shape(k: int) -> Tuple[int, int]:
    """(width, height) with width * height == k and the two sides as close as possible (256 -> 16x16)."""
    if k < 1:
        raise EmptyInputError("a grid needs at least one neuron")
    height = int(np.floor(np.sqrt(k)))
    while k % height:
        height -= 1
    return k // height, height


class SomGrid:
    """
    Two-dimensional lattice of k = width * height neurons.

    Neuron n sits at grid position (n // width, n % width) and owns an m-dimensional
    weight vector.

    Attributes:
        width (int): Neurons per row
        height (int): Number of rows
        positions (np.ndarray): int array (k, 2) of (row, col) coordinates
        weights (np.ndarray): float64 array (k, m)
        seed (int): Seed the weights were initialized from
    """

    def __init__(self, width: int, height: int, weights: np.ndarray, seed: int = 0):
        weights = np.asarray(weights, dtype=np.float64)
        if width < 1 or height < 1:
            raise EmptyInputError("a grid needs at least one neuron")
        if weights.ndim != 2 or weights.shape[0] != width * height:
            raise DimensionMismatchError(
                f"weights of shape {weights.shape} do not fit a {width}x{height} grid")
        if not np.all(np.isfinite(weights)):
            raise ValueError("grid weights must be finite")
        self.width = int(width)
        self.height = int(height)
        self.weights = weights
        self.seed = int(seed)
        rows, cols = np.divmod(np.arange(width * height), width)
        self.positions = np.stack([rows, cols], axis=1)
        self._grid_sq_dist = None

    @classmethod
    def create(cls, width: int, height: int, dim: int, seed: int = 0) -> "SomGrid":
        """Grid with weights drawn uniformly from [0, 1]^dim."""
        rng = np.random.default_rng(seed)
        return cls(width, height, rng.random((width * height, dim)), seed)

    @property
    def k(self) -> int:
        return self.width * self.height

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "SomGrid":
        return SomGrid(self.width, self.height, self.weights.copy(), self.seed)

    def grid_sq_distances(self) -> np.ndarray:
        """(k, k) matrix of squared lattice distances ||p_n - p_s||^2."""
        if self._grid_sq_dist is None:
            diff = self.positions[:, None, :] - self.positions[None, :, :]
            self._grid_sq_dist = np.sum(diff * diff, axis=2).astype(np.float64)
        return self._grid_sq_dist

    def distances(self, v: np.ndarray) -> np.ndarray:
        """Euclidean distance from v to every neuron's weight vector."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise DimensionMismatchError(f"input of shape {v.shape}, grid dimension is {self.dim}")
        diff = self.weights - v
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))

    def activities(self, v: np.ndarray, alpha: float) -> np.ndarray:
        """Gaussian activity exp(-||v - w_n|| / alpha) of every neuron."""
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        return np.exp(-self.distances(v) / alpha)

    def winner(self, v: np.ndarray) -> int:
        """Index of the best matching unit (lowest index on ties)."""
        return int(np.argmin(self.distances(v)))

    def quantization_error(self, data: np.ndarray) -> float:
        """Mean distance between each vector and its best matching unit."""
        data = np.asarray(data)
        if len(data) == 0:
            raise EmptyInputError("no vectors to measure")
        return float(np.mean(np.sqrt(np.min(batch_sq_distances(data, self.weights), axis=1))))

    def to_dict(self) -> Dict:
        return {"width": self.width, "height": self.height, "k": self.k, "dim": self.dim, "seed": self.seed}

    def __repr__(self) -> str:
        return f"SomGrid({self.width}x{self.height}, dim={self.dim}, seed={self.seed})"


# ==================== ELEMENTARY OPERATIONS ====================

def activity(v: np.ndarray, w_n: np.ndarray, alpha: float) -> float:
    """exp(-||v - w_n|| / alpha), in (0, 1]."""
    v = np.asarray(v, dtype=np.float64)
    w_n = np.asarray(w_n, dtype=np.float64)
    if v.shape != w_n.shape:
        raise DimensionMismatchError(f"vector shapes differ: {v.shape} vs {w_n.shape}")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return float(np.exp(-np.linalg.norm(v - w_n) / alpha))


def elect_winner(activities: Sequence[float]) -> int:
    """Index of the maximum activity; ties go to the lowest index."""
    activities = np.asarray(activities, dtype=np.float64)
    if activities.size == 0:
        raise EmptyInputError("cannot elect a winner on an empty grid")
    return int(np.argmax(activities))


def neighborhood(p_n: Sequence[float], p_s: Sequence[float], sigma: float) -> float:
    """Gaussian neighborhood exp(-||p_n - p_s||^2 / (2 sigma^2))."""
    diff = np.asarray(p_n, dtype=np.float64) - np.asarray(p_s, dtype=np.float64)
    return float(np.exp(-np.dot(diff, diff) / (2.0 * sigma * sigma)))


def schedule(x_i: float, x_f: float, t: float, t_f: int) -> float:
    """Exponential decay x_i * (x_f / x_i)^(t / t_f); exact at both endpoints."""
    if t_f == 0:
        raise ValueError("t_f must be at least 1")
    if t == 0:
        return float(x_i)
    if t == t_f:
        return float(x_f)
    return float(x_i * (x_f / x_i) ** (t / t_f))


def update_weights(grid: SomGrid, v: np.ndarray, s: int, epsilon: float, sigma: float) -> SomGrid:
    """
    Online update w_n <- w_n + epsilon * h_sigma(n, s) * (v - w_n) for every neuron (in place).

    Returns:
        The same grid, for chaining
    """
    h = np.exp(-grid.grid_sq_distances()[s] / (2.0 * sigma * sigma))
    grid.weights += (epsilon * h)[:, None] * (np.asarray(v, dtype=np.float64) - grid.weights)
    return grid


def batch_sq_distances(data: np.ndarray, weights: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """
    (n, k) squared Euclidean distances, computed in chunks through the dot-product expansion.

    Only one chunk of data is held in float64 at a time.
    """
    data = np.asarray(data)
    weights = np.asarray(weights, dtype=np.float64)
    w_sq = np.einsum("ij,ij->i", weights, weights)
    out = np.empty((data.shape[0], weights.shape[0]))
    for start in range(0, data.shape[0], chunk):
        block = np.asarray(data[start:start + chunk], dtype=np.float64)
        d = np.einsum("ij,ij->i", block, block)[:, None] + w_sq[None, :] - 2.0 * block @ weights.T
        out[start:start + chunk] = np.maximum(d, 0.0)
    return out


def best_matching_units(data: np.ndarray, weights: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """
    Index of the nearest weight row for every data row (lowest index on ties).

    Candidates come from the dot-product expansion; rows whose closest candidates lie
    within rounding distance of each other are settled on exact squared differences,
    so the result is the argmin of sum((x - w)^2) for every row.
    """
    data = np.asarray(data)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape[0] == 0:
        raise EmptyInputError("no weight vectors to match against")
    w_sq_max = float(np.max(np.einsum("ij,ij->i", weights, weights)))
    out = np.empty(data.shape[0], dtype=np.int64)
    for start in range(0, data.shape[0], chunk):
        block = np.asarray(data[start:start + chunk], dtype=np.float64)
        approx = batch_sq_distances(block, weights, chunk)
        tol = 1e-9 * (np.einsum("ij,ij->i", block, block) + w_sq_max)
        near = approx <= (approx.min(axis=1) + tol)[:, None]
        out[start:start + len(block)] = np.argmax(near, axis=1)
        for r in np.flatnonzero(np.count_nonzero(near, axis=1) > 1):
            candidates = np.flatnonzero(near[r])
            diff = weights[candidates] - block[r]
            out[start + r] = candidates[int(np.argmin(np.einsum("ij,ij->i", diff, diff)))]
    return out


# ==================== TRAINING ====================

def train(grid: SomGrid, data: np.ndarray, hp: SomHyperParams, seed: int) -> SomGrid:
    """
    Train a copy of the grid for hp.epochs epochs.

    Each epoch presents every vector once in an order shuffled from seed; epsilon and
    sigma follow the exponential schedules and change once per epoch, after the data loop.
    The result depends only on (initial grid, data, hp, seed).

    Raises:
        EmptyInputError: no training vectors
        DimensionMismatchError: vectors and weights differ in dimension
    """
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[0] == 0:
        raise EmptyInputError("SOM training needs a non-empty (n, m) dataset")
    if data.shape[1] != grid.dim:
        raise DimensionMismatchError(f"data dimension {data.shape[1]} != grid dimension {grid.dim}")

    trained = grid.copy()
    weights = trained.weights
    grid_sq = trained.grid_sq_distances()
    rng = np.random.default_rng(seed)

    epsilon, sigma = hp.epsilon_i, hp.sigma_i
    for t in range(hp.epochs):
        started = time.time()
        # h for every possible winner at this epoch's sigma
        h_table = epsilon * np.exp(-grid_sq / (2.0 * sigma * sigma))
        for idx in rng.permutation(data.shape[0]):
            # one row at a time in float64; data keeps its own dtype
            diff = data[idx].astype(np.float64) - weights
            s = int(np.argmin(np.einsum("ij,ij->i", diff, diff)))
            weights += h_table[s][:, None] * diff
        epsilon = schedule(hp.epsilon_i, hp.epsilon_f, t + 1, hp.epochs)
        sigma = schedule(hp.sigma_i, hp.sigma_f, t + 1, hp.epochs)
        logger.info("  SOM epoch %d/%d done in %.1fs (next eps=%.4f, sigma=%.4f)",
                    t + 1, hp.epochs, time.time() - started, epsilon, sigma)
    if not np.all(np.isfinite(weights)):
        raise ValueError("SOM weights diverged (non-finite values)")
    logger.info("✓ Trained %r on %d vectors", trained, data.shape[0])
    return trained


# ==================== CHECKPOINTS ====================

def save_grid(path, grid: SomGrid, hp: Optional[SomHyperParams] = None,
              labels: Optional[np.ndarray] = None, extra: Optional[Dict] = None):
    """Write the grid (and optionally its neuron labels) to a versioned container."""
    arrays = {"weights": grid.weights}
    if labels is not None:
        arrays["labels"] = np.asarray(labels, dtype=np.int16)
    meta = {
        "width": grid.width,
        "height": grid.height,
        "seed": grid.seed,
        "hyper": hp.model_dump() if hp is not None else None,
    }
    meta.update(extra or {})
    return write_container(path, GRID_KIND, arrays, meta)


def load_grid(path) -> Tuple[SomGrid, Optional[SomHyperParams], Optional[np.ndarray], Dict]:
    """Inverse of save_grid: (grid, hyper-params or None, labels or None, metadata)."""
    arrays, meta = read_container(path, GRID_KIND)
    grid = SomGrid(meta["width"], meta["height"], arrays["weights"], meta["seed"])
    hp = SomHyperParams.model_validate(meta["hyper"]) if meta.get("hyper") else None
    return grid, hp, arrays.get("labels"), meta

