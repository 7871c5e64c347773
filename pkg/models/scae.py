"""
Convolutional Feature Extractors
The sparse convolutional autoencoder (64c5-Xc5-p5-u5-64d5-1d5) and the supervised
CNN+MLP baseline (64c5-Xc5-p5 + softmax head), both built on the convolution engine.
"""

import logging
import time
from typing import Dict, List, Optional, Tuple

import numpy as np

from models.convnet import (
    Adadelta,
    ConvLayer,
    DeconvLayer,
    DenseLayer,
    Parameter,
    maxpool_backward,
    maxpool_forward,
    mse,
    penalties,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    softmax_crossentropy,
    upsample_backward,
    upsample_forward,
)
from models.dataset import NUM_CLASSES, LabeledDataset
from models.errors import ContainerError, EmptyInputError, NonFiniteError, ShapeMismatchError
from models.schemas import AdadeltaParams
from utils.containers import read_container, write_container

logger = logging.getLogger(__name__)

MODEL_KIND = "convnet_model"
KERNEL = 5
POOL = 5


def as_nchw(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """(N, 28, 28) or (N, 1, 28, 28) images as a contiguous (N, 1, H, W) batch."""
    images = np.asarray(images, dtype=dtype)
    if images.ndim == 3:
        images = images[:, None, :, :]
    if images.ndim != 4 or images.shape[1] != 1:
        raise ShapeMismatchError(f"expected single-channel images, got shape {images.shape}")
    return np.ascontiguousarray(images)


class TrainingHistory:
    """
    Per-epoch record of a training loop.

    Attributes:
        initial_loss (float): Objective before the first update
        losses (List[float]): Mean objective of each epoch
        metrics (List[float]): Reconstruction MSE (autoencoder) or training accuracy (baseline)
        test_accuracy (Optional[float]): Baseline accuracy on held-out data, when given
    """

    def __init__(self, initial_loss: float):
        self.initial_loss = initial_loss
        self.losses: List[float] = []
        self.metrics: List[float] = []
        self.test_accuracy: Optional[float] = None
        self.seconds = 0.0

    def to_dict(self) -> Dict:
        return {
            "initial_loss": self.initial_loss,
            "losses": self.losses,
            "metrics": self.metrics,
            "test_accuracy": self.test_accuracy,
            "seconds": round(self.seconds, 2),
        }


class _ConvTrunk:
    """Shared encoder: conv(1 -> hidden, 5x5) -> ReLU -> conv(hidden -> X, 5x5) -> ReLU -> maxpool(5, 5)."""

    name = "trunk"

    def __init__(self, feature_maps: int, hidden_maps: int = 64, seed: int = 0, dtype=np.float32):
        if feature_maps < 1 or hidden_maps < 1:
            raise ValueError("feature and hidden map counts must be positive")
        self.feature_maps = feature_maps
        self.hidden_maps = hidden_maps
        self.seed = seed
        self.dtype = dtype
        self.rng = np.random.default_rng(seed)
        self.conv1 = ConvLayer(1, hidden_maps, KERNEL, rng=self.rng, dtype=dtype)
        self.conv2 = ConvLayer(hidden_maps, feature_maps, KERNEL, rng=self.rng, dtype=dtype)
        self._cache: Dict[str, np.ndarray] = {}

    def layers(self) -> Dict[str, object]:
        return {"conv1": self.conv1, "conv2": self.conv2}

    def named_parameters(self) -> Dict[str, Parameter]:
        named = {}
        for layer_name, layer in self.layers().items():
            first, second = layer.parameters()
            named[f"{layer_name}.{'weights' if isinstance(layer, DenseLayer) else 'kernels'}"] = first
            named[f"{layer_name}.biases"] = second
        return named

    def parameters(self) -> List[Parameter]:
        return list(self.named_parameters().values())

    def weight_parameters(self) -> List[Parameter]:
        """Kernels and dense weights (the tensors the L2 penalty covers)."""
        return [p for name, p in self.named_parameters().items() if not name.endswith(".biases")]

    def parameter_count(self) -> int:
        return int(sum(p.value.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    @property
    def code_shape(self) -> Tuple[int, int, int]:
        return self.feature_maps, 4, 4

    @property
    def feature_length(self) -> int:
        return self.feature_maps * 16

    def encode(self, x: np.ndarray) -> np.ndarray:
        """Code layer (N, X, 4, 4) of a (N, 1, 28, 28) batch; intermediates kept for backward."""
        z1 = self.conv1.forward(x)
        a1 = relu(z1)
        z2 = self.conv2.forward(a1)
        a2 = relu(z2)
        code, argmax = maxpool_forward(a2, POOL, POOL)
        self._cache.update(z1=z1, z2=z2, a2=a2, argmax=argmax)
        return code

    def encode_backward(self, g_code: np.ndarray, g_activity: Optional[np.ndarray] = None):
        c = self._cache
        g_a2 = maxpool_backward(g_code, c["argmax"], c["a2"].shape, POOL, POOL)
        if g_activity is not None:
            g_a2 = g_a2 + g_activity
        g_a1 = self.conv2.backward(relu_backward(g_a2, c["z2"]))
        self.conv1.backward(relu_backward(g_a1, c["z1"]))


class ScaeModel(_ConvTrunk):
    """
    Sparse convolutional autoencoder.

    Encoder as in _ConvTrunk; decoder upsample(5) -> deconv(X -> hidden) -> ReLU ->
    deconv(hidden -> 1) -> sigmoid. With lambda_weights = lambda_activity = 0 it is the
    plain convolutional autoencoder used for the sparsity ablation.
    """

    name = "scae"

    def __init__(self, feature_maps: int, hidden_maps: int = 64, lambda_weights: float = 1e-4,
                 lambda_activity: float = 1e-4, seed: int = 0, dtype=np.float32):
        super().__init__(feature_maps, hidden_maps, seed, dtype)
        if lambda_weights < 0 or lambda_activity < 0:
            raise ValueError("penalty rates must be non-negative")
        self.lambda_weights = lambda_weights
        self.lambda_activity = lambda_activity
        self.deconv1 = DeconvLayer(feature_maps, hidden_maps, KERNEL, rng=self.rng, dtype=dtype)
        self.deconv2 = DeconvLayer(hidden_maps, 1, KERNEL, rng=self.rng, dtype=dtype)

    @property
    def topology(self) -> str:
        h, x = self.hidden_maps, self.feature_maps
        return f"{h}c5-{x}c5-p5-u5-{h}d5-1d5"

    def layers(self) -> Dict[str, object]:
        return {"conv1": self.conv1, "conv2": self.conv2, "deconv1": self.deconv1, "deconv2": self.deconv2}

    def decode(self, code: np.ndarray) -> np.ndarray:
        z3 = self.deconv1.forward(upsample_forward(code, POOL))
        out = sigmoid(self.deconv2.forward(relu(z3)))
        self._cache.update(z3=z3, out=out)
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Reconstruction (N, 1, 28, 28)."""
        return self.decode(self.encode(x))

    def loss_and_grads(self, x: np.ndarray) -> Tuple[float, float]:
        """
        Forward/backward of MSE + lambda_w sum(w^2) + lambda_a mean_n sum|a| on one batch.

        The activity term covers the second convolution's rectified output and is
        averaged over the batch. Gradients are accumulated into the parameters.

        Returns:
            (total objective, reconstruction MSE)
        """
        self.zero_grad()
        out = self.forward(x)
        recon, g_out = mse(out, x)
        weights = [p.value for p in self.weight_parameters()]
        penalty, weight_grads, g_activity = penalties(
            weights, self._cache["a2"], self.lambda_weights, self.lambda_activity / x.shape[0])

        g_z4 = sigmoid_backward(g_out, self._cache["out"])
        g_a3 = self.deconv2.backward(g_z4)
        g_u = self.deconv1.backward(relu_backward(g_a3, self._cache["z3"]))
        self.encode_backward(upsample_backward(g_u, POOL), g_activity)
        for p, g in zip(self.weight_parameters(), weight_grads):
            p.grad += g
        return recon + penalty, recon


class CnnBaselineModel(_ConvTrunk):
    """Supervised upper bound: the shared trunk followed by dense(X * 16 -> 10) with softmax."""

    name = "cnn"

    def __init__(self, feature_maps: int, hidden_maps: int = 64, seed: int = 0, dtype=np.float32):
        super().__init__(feature_maps, hidden_maps, seed, dtype)
        self.dense = DenseLayer(self.feature_length, NUM_CLASSES, rng=self.rng, dtype=dtype)

    @property
    def topology(self) -> str:
        return f"{self.hidden_maps}c5-{self.feature_maps}c5-p5-{NUM_CLASSES}fc"

    def layers(self) -> Dict[str, object]:
        return {"conv1": self.conv1, "conv2": self.conv2, "dense": self.dense}

    def logits(self, x: np.ndarray) -> np.ndarray:
        code = self.encode(x)
        return self.dense.forward(code.reshape(code.shape[0], -1))

    def loss_and_grads(self, x: np.ndarray, classes: np.ndarray) -> Tuple[float, float]:
        """Softmax cross-entropy on one batch; returns (loss, batch accuracy)."""
        self.zero_grad()
        logits = self.logits(x)
        loss, g_logits = softmax_crossentropy(logits, classes)
        g_code = self.dense.backward(g_logits).reshape((x.shape[0],) + self.code_shape)
        self.encode_backward(g_code)
        return loss, float(np.mean(np.argmax(logits, axis=1) == classes))

    def predict(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        x = as_nchw(images, self.dtype)
        out = [np.argmax(self.logits(x[i:i + batch_size]), axis=1) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.empty(0, dtype=np.int64)

    def accuracy(self, dataset: LabeledDataset, batch_size: int = 256) -> float:
        if dataset.count == 0:
            raise EmptyInputError("cannot measure accuracy on an empty dataset")
        return float(np.mean(self.predict(dataset.images, batch_size) == dataset.labels))


# ==================== TRAINING ====================

def _batches(count: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield order[start:start + batch_size]


def _check_finite(loss: float, model: _ConvTrunk, epoch: int, batch: int):
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite loss in {model.name} ({model.topology}) at epoch {epoch}, batch {batch}")


def reconstruction_error(model: ScaeModel, images: np.ndarray, batch_size: int = 256) -> float:
    """Mean squared reconstruction error over a set of images."""
    x = as_nchw(images, model.dtype)
    total = 0.0
    for i in range(0, len(x), batch_size):
        batch = x[i:i + batch_size]
        total += float(np.sum((model.forward(batch) - batch) ** 2))
    return total / x.size


def train_scae(model: ScaeModel, images: np.ndarray, epochs: int, batch_size: int, seed: int,
               optimizer: Optional[AdadeltaParams] = None) -> Tuple[ScaeModel, TrainingHistory]:
    """
    Train the autoencoder in place on unlabeled images with Adadelta.

    Args:
        model: Autoencoder to train
        images: (N, 28, 28) images in [0, 1]; no labels are accepted
        epochs: Passes over the images
        batch_size: Mini-batch size
        seed: Seed of the per-epoch batch order

    Returns:
        (model, history with the per-epoch mean objective and reconstruction MSE)

    Raises:
        NonFiniteError: the objective became NaN or inf
    """
    x = as_nchw(images, model.dtype)
    if len(x) == 0:
        raise EmptyInputError("autoencoder training needs at least one image")
    if np.min(x) < 0 or np.max(x) > 1:
        raise ValueError("images must lie in [0, 1]")
    history = TrainingHistory(reconstruction_error(model, x))
    opt = Adadelta(model.parameters(), optimizer)
    rng = np.random.default_rng(seed)
    started = time.time()

    for epoch in range(epochs):
        epoch_start = time.time()
        losses, recons, sizes = [], [], []
        for b, idx in enumerate(_batches(len(x), batch_size, rng)):
            loss, recon = model.loss_and_grads(x[idx])
            _check_finite(loss, model, epoch, b)
            opt.step()
            losses.append(loss)
            recons.append(recon)
            sizes.append(len(idx))
        history.losses.append(float(np.average(losses, weights=sizes)))
        history.metrics.append(float(np.average(recons, weights=sizes)))
        logger.info("  %s epoch %d/%d: loss=%.5f mse=%.5f (%.1fs)", model.topology, epoch + 1, epochs,
                    history.losses[-1], history.metrics[-1], time.time() - epoch_start)

    history.seconds = time.time() - started
    logger.info("✓ Trained %s on %d images in %.1fs", model.topology, len(x), history.seconds)
    return model, history


def train_cnn_baseline(model: CnnBaselineModel, train: LabeledDataset, epochs: int, batch_size: int,
                       seed: int, optimizer: Optional[AdadeltaParams] = None,
                       test: Optional[LabeledDataset] = None) -> Tuple[CnnBaselineModel, TrainingHistory]:
    """
    Train the supervised baseline in place with softmax cross-entropy and Adadelta.

    Returns:
        (model, history); history.test_accuracy is set when a test set is given
    """
    if train.count == 0:
        raise EmptyInputError("baseline training needs labeled images")
    x = as_nchw(train.images, model.dtype)
    y = np.asarray(train.labels, dtype=np.int64)
    history = TrainingHistory(float("nan"))
    opt = Adadelta(model.parameters(), optimizer)
    rng = np.random.default_rng(seed)
    started = time.time()

    for epoch in range(epochs):
        epoch_start = time.time()
        losses, accs, sizes = [], [], []
        for b, idx in enumerate(_batches(len(x), batch_size, rng)):
            loss, acc = model.loss_and_grads(x[idx], y[idx])
            _check_finite(loss, model, epoch, b)
            opt.step()
            losses.append(loss)
            accs.append(acc)
            sizes.append(len(idx))
        history.losses.append(float(np.average(losses, weights=sizes)))
        history.metrics.append(float(np.average(accs, weights=sizes)))
        logger.info("  %s epoch %d/%d: loss=%.4f train_acc=%.4f (%.1fs)", model.topology, epoch + 1, epochs,
                    history.losses[-1], history.metrics[-1], time.time() - epoch_start)

    if test is not None:
        history.test_accuracy = model.accuracy(test)
        logger.info("✓ %s test accuracy: %.4f", model.topology, history.test_accuracy)
    history.seconds = time.time() - started
    return model, history


def extract_features(model: _ConvTrunk, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Flattened code layer (N, X * 16); the decoder / classifier head is never run."""
    x = as_nchw(images, model.dtype)
    if len(x) == 0:
        return np.empty((0, model.feature_length), dtype=model.dtype)
    return np.concatenate([model.encode(x[i:i + batch_size]).reshape(-1, model.feature_length)
                           for i in range(0, len(x), batch_size)])


# ==================== CHECKPOINTS ====================

def save_model(path, model: _ConvTrunk, extra: Optional[Dict] = None):
    """Write topology, every parameter and its Adadelta state to a versioned container."""
    arrays = {}
    for name, p in model.named_parameters().items():
        arrays[name] = p.value
        arrays[f"{name}.square_avg"] = p.square_avg
        arrays[f"{name}.delta_avg"] = p.delta_avg
    meta = {
        "model": model.name,
        "topology": model.topology,
        "feature_maps": model.feature_maps,
        "hidden_maps": model.hidden_maps,
        "seed": model.seed,
    }
    if isinstance(model, ScaeModel):
        meta.update(lambda_weights=model.lambda_weights, lambda_activity=model.lambda_activity)
    meta.update(extra or {})
    return write_container(path, MODEL_KIND, arrays, meta)


def load_model(path) -> _ConvTrunk:
    """Inverse of save_model."""
    arrays, meta = read_container(path, MODEL_KIND)
    if meta["model"] == ScaeModel.name:
        model = ScaeModel(meta["feature_maps"], meta["hidden_maps"], meta["lambda_weights"],
                          meta["lambda_activity"], seed=meta["seed"])
    elif meta["model"] == CnnBaselineModel.name:
        model = CnnBaselineModel(meta["feature_maps"], meta["hidden_maps"], seed=meta["seed"])
    else:
        raise ContainerError(f"{path}: unknown model type {meta['model']!r}")
    if model.topology != meta["topology"]:
        raise ContainerError(f"{path}: topology {meta['topology']} does not match {model.topology}")
    for name, p in model.named_parameters().items():
        if arrays[name].shape != p.value.shape:
            raise ContainerError(f"{path}: parameter {name} has shape {arrays[name].shape}")
        p.value = arrays[name].astype(model.dtype)
        p.square_avg = arrays[f"{name}.square_avg"].astype(model.dtype)
        p.delta_avg = arrays[f"{name}.delta_avg"].astype(model.dtype)
    return model
