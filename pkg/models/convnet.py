"""
Convolution Engine
Dense NCHW tensors on numpy with hand-derived gradients: 2-D convolution, transposed
convolution, max/average pooling, nearest-neighbor up-sampling, ReLU/sigmoid/softmax,
MSE and softmax cross-entropy losses, L2 weight / L1 activity penalties, and Adadelta.
"""

import logging
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from models.errors import NonFiniteError, ShapeMismatchError
from models.schemas import AdadeltaParams

logger = logging.getLogger(__name__)

Tensor = np.ndarray
Padding = Union[str, int]


def resolve_padding(padding: Padding, kernel_size: int) -> int:
    """Zero-padding per side for "valid", "same" (odd kernels) or an explicit count."""
    if padding == "valid":
        return 0
    if padding == "same":
        return kernel_size // 2
    if isinstance(padding, int) and padding >= 0:
        return padding
    raise ValueError(f"unknown padding {padding!r}")


def pad2d(x: Tensor, p: int) -> Tensor:
    """Zero-pad the two spatial axes of an (N, C, H, W) tensor by p on each side."""
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _windows(x: Tensor, kh: int, kw: int) -> Tensor:
    return sliding_window_view(x, (kh, kw), axis=(2, 3))


def correlate(x: Tensor, kernels: Tensor) -> Tensor:
    """
    Valid cross-correlation.

    Args:
        x: (N, C, H, W)
        kernels: (O, C, kh, kw)

    Returns:
        (N, O, H - kh + 1, W - kw + 1)
    """
    out_maps, in_maps, kh, kw = kernels.shape
    if x.ndim != 4 or x.shape[1] != in_maps:
        raise ShapeMismatchError(f"input {x.shape} does not match kernels {kernels.shape}")
    if x.shape[2] < kh or x.shape[3] < kw:
        raise ShapeMismatchError(f"input {x.shape} is smaller than the {kh}x{kw} kernel")
    out = np.tensordot(_windows(x, kh, kw), kernels, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def kernel_correlation(x: Tensor, g: Tensor, kh: int, kw: int) -> Tensor:
    """dK[o, c, i, j] = sum_{n,y,x} g[n, o, y, x] * x[n, c, y + i, x + j]."""
    return np.tensordot(g, _windows(x, kh, kw), axes=([0, 2, 3], [0, 2, 3]))


# ==================== PARAMETERS & LAYERS ====================

class Parameter:
    """
    Trainable array with its gradient and Adadelta moving averages.

    Attributes:
        value (np.ndarray): Current value
        grad (np.ndarray): Gradient from the last backward pass
        square_avg (np.ndarray): E[g^2]
        delta_avg (np.ndarray): E[dx^2]
    """

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)
        self.square_avg = np.zeros_like(value)
        self.delta_avg = np.zeros_like(value)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


def glorot_uniform(shape: Tuple[int, ...], fan_in: int, fan_out: int,
                   rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class ConvLayer:
    """
    2-D convolution with kernels (out_maps, in_maps, kh, kw) and one bias per output map.

    Attributes:
        kernels (Parameter): Convolution kernels
        biases (Parameter): Biases (out_maps,)
        padding (int): Zero padding per side applied before a valid correlation
    """

    def __init__(self, in_maps: int, out_maps: int, kernel_size: int = 5, padding: Padding = "valid",
                 rng: Optional[np.random.Generator] = None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        shape = (out_maps, in_maps, kernel_size, kernel_size)
        area = kernel_size * kernel_size
        self.kernels = Parameter(glorot_uniform(shape, in_maps * area, out_maps * area, rng, dtype))
        self.biases = Parameter(np.zeros(out_maps, dtype=dtype))
        self.padding = resolve_padding(padding, kernel_size)
        self._input = None

    @property
    def in_maps(self) -> int:
        return self.kernels.value.shape[1]

    @property
    def out_maps(self) -> int:
        return self.kernels.value.shape[0]

    def parameters(self) -> List[Parameter]:
        return [self.kernels, self.biases]

    def forward(self, x: Tensor) -> Tensor:
        self._input = x
        return conv2d_forward(x, self)

    def backward(self, upstream: Tensor) -> Tensor:
        dx, dk, db = conv2d_backward(self._input, self, upstream)
        self.kernels.grad += dk
        self.biases.grad += db
        return dx


class DeconvLayer:
    """
    Transposed convolution with kernels (in_maps, out_maps, kh, kw); a valid-transposed
    layer grows each spatial side by kh - 1.
    """

    def __init__(self, in_maps: int, out_maps: int, kernel_size: int = 5,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        shape = (in_maps, out_maps, kernel_size, kernel_size)
        area = kernel_size * kernel_size
        self.kernels = Parameter(glorot_uniform(shape, in_maps * area, out_maps * area, rng, dtype))
        self.biases = Parameter(np.zeros(out_maps, dtype=dtype))
        self._input = None

    @property
    def in_maps(self) -> int:
        return self.kernels.value.shape[0]

    @property
    def out_maps(self) -> int:
        return self.kernels.value.shape[1]

    def parameters(self) -> List[Parameter]:
        return [self.kernels, self.biases]

    def forward(self, x: Tensor) -> Tensor:
        self._input = x
        return deconv2d_forward(x, self)

    def backward(self, upstream: Tensor) -> Tensor:
        dx, dk, db = deconv2d_backward(self._input, self, upstream)
        self.kernels.grad += dk
        self.biases.grad += db
        return dx


class DenseLayer:
    """Fully connected layer, weights (in_features, out_features)."""

    def __init__(self, in_features: int, out_features: int,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.weights = Parameter(glorot_uniform((in_features, out_features), in_features, out_features, rng, dtype))
        self.biases = Parameter(np.zeros(out_features, dtype=dtype))
        self._input = None

    def parameters(self) -> List[Parameter]:
        return [self.weights, self.biases]

    def forward(self, x: Tensor) -> Tensor:
        self._input = x
        return x @ self.weights.value + self.biases.value

    def backward(self, upstream: Tensor) -> Tensor:
        self.weights.grad += self._input.T @ upstream
        self.biases.grad += upstream.sum(axis=0)
        return upstream @ self.weights.value.T


# ==================== CONVOLUTIONS ====================

def conv2d_forward(x: Tensor, layer: ConvLayer) -> Tensor:
    """Convolution output; valid 5x5 shrinks each side by 4, explicit(p) pads p zeros first."""
    if x.ndim != 4 or x.shape[1] != layer.in_maps:
        raise ShapeMismatchError(f"input {x.shape} does not match a layer with {layer.in_maps} input maps")
    out = correlate(pad2d(x, layer.padding), layer.kernels.value)
    return out + layer.biases.value[None, :, None, None]


def conv2d_backward(x: Tensor, layer: ConvLayer, upstream: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    """(input_grad, kernel_grad, bias_grad) of a scalar loss given d loss / d output."""
    kernels = layer.kernels.value
    _, _, kh, kw = kernels.shape
    p = layer.padding
    xp = pad2d(x, p)
    expected = (x.shape[0], layer.out_maps, xp.shape[2] - kh + 1, xp.shape[3] - kw + 1)
    if upstream.shape != expected:
        raise ShapeMismatchError(f"upstream gradient {upstream.shape}, expected {expected}")

    kernel_grad = kernel_correlation(xp, upstream, kh, kw)
    bias_grad = upstream.sum(axis=(0, 2, 3))
    flipped = kernels[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    dxp = correlate(pad2d(upstream, kh - 1), np.ascontiguousarray(flipped))
    input_grad = dxp[:, :, p:dxp.shape[2] - p, p:dxp.shape[3] - p] if p else dxp
    return input_grad, kernel_grad, bias_grad


def deconv2d_forward(x: Tensor, layer: DeconvLayer) -> Tensor:
    """Transposed convolution: out[n,o,Y,X] = sum_{c,i,j} x[n,c,Y-i,X-j] K[c,o,i,j] + b[o]."""
    kernels = layer.kernels.value
    if x.ndim != 4 or x.shape[1] != layer.in_maps:
        raise ShapeMismatchError(f"input {x.shape} does not match a layer with {layer.in_maps} input maps")
    _, _, kh, kw = kernels.shape
    flipped = np.ascontiguousarray(kernels[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    out = correlate(pad2d(x, kh - 1), flipped)
    return out + layer.biases.value[None, :, None, None]


def deconv2d_backward(x: Tensor, layer: DeconvLayer, upstream: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    """(input_grad, kernel_grad, bias_grad) of the transposed convolution."""
    kernels = layer.kernels.value
    _, _, kh, kw = kernels.shape
    expected = (x.shape[0], layer.out_maps, x.shape[2] + kh - 1, x.shape[3] + kw - 1)
    if upstream.shape != expected:
        raise ShapeMismatchError(f"upstream gradient {upstream.shape}, expected {expected}")
    input_grad = correlate(upstream, kernels)
    kernel_grad = kernel_correlation(upstream, x, kh, kw)
    bias_grad = upstream.sum(axis=(0, 2, 3))
    return input_grad, kernel_grad, bias_grad


# ==================== POOLING & UP-SAMPLING ====================

def _pool_windows(x: Tensor, k: int, s: int) -> Tensor:
    if x.ndim != 4:
        raise ShapeMismatchError(f"pooling expects (N, C, H, W), got {x.shape}")
    if x.shape[2] < k or x.shape[3] < k:
        raise ShapeMismatchError(f"{k}x{k} window larger than input {x.shape[2:]}")
    return _windows(x, k, k)[:, :, ::s, ::s]


def maxpool_forward(x: Tensor, k: int, s: int) -> Tuple[Tensor, Tensor]:
    """Max over k x k windows with stride s; returns (output, flat argmax inside each window)."""
    win = _pool_windows(x, k, s)
    flat = win.reshape(win.shape[:4] + (k * k,))
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


def maxpool_backward(upstream: Tensor, argmax: Tensor, input_shape: Sequence[int], k: int, s: int) -> Tensor:
    """Route each output gradient to the first (row-major) maximum of its window."""
    dx = np.zeros(input_shape, dtype=upstream.dtype)
    ho, wo = upstream.shape[2:]
    for i in range(k):
        for j in range(k):
            routed = np.where(argmax == i * k + j, upstream, 0)
            dx[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += routed
    return dx


def avgpool_forward(x: Tensor, k: int, s: int) -> Tensor:
    """Mean over k x k windows with stride s."""
    return _pool_windows(x, k, s).mean(axis=(-2, -1))


def avgpool_backward(upstream: Tensor, input_shape: Sequence[int], k: int, s: int) -> Tensor:
    dx = np.zeros(input_shape, dtype=upstream.dtype)
    ho, wo = upstream.shape[2:]
    share = upstream / (k * k)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += share
    return dx


def upsample_forward(x: Tensor, k: int) -> Tensor:
    """Nearest-neighbor up-sampling by an integer factor k."""
    if k < 1:
        raise ValueError("up-sampling factor must be >= 1")
    return x.repeat(k, axis=2).repeat(k, axis=3)


def upsample_backward(upstream: Tensor, k: int) -> Tensor:
    """Sum each k x k block of the upstream gradient."""
    if k < 1:
        raise ValueError("up-sampling factor must be >= 1")
    n, c, h, w = upstream.shape
    return upstream.reshape(n, c, h // k, k, w // k, k).sum(axis=(3, 5))


# ==================== ACTIVATIONS ====================

def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0)


def relu_backward(upstream: Tensor, x: Tensor) -> Tensor:
    return upstream * (x > 0)


def sigmoid(x: Tensor) -> Tensor:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(upstream: Tensor, y: Tensor) -> Tensor:
    """Gradient through a sigmoid given its output y."""
    return upstream * y * (1.0 - y)


def softmax(logits: Tensor) -> Tensor:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


# ==================== LOSSES & PENALTIES ====================

def mse(output: Tensor, target: Tensor) -> Tuple[float, Tensor]:
    """Mean squared error over all elements and its gradient."""
    if output.shape != target.shape:
        raise ShapeMismatchError(f"output {output.shape} vs target {target.shape}")
    diff = output - target
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


def softmax_crossentropy(logits: Tensor, classes: Union[int, Sequence[int], np.ndarray]) -> Tuple[float, Tensor]:
    """
    Mean cross-entropy of softmax(logits) against integer classes, and d loss / d logits.

    Args:
        logits: (N, num_classes) or a single (num_classes,) row
        classes: (N,) class ids, or one id for a single row
    """
    single = logits.ndim == 1
    logits2 = logits[None, :] if single else logits
    classes = np.atleast_1d(np.asarray(classes, dtype=np.int64))
    n, num_classes = logits2.shape
    if classes.shape != (n,):
        raise ShapeMismatchError(f"{classes.shape[0]} classes for {n} rows")
    if np.any(classes < 0) or np.any(classes >= num_classes):
        raise ValueError(f"class ids must lie in 0..{num_classes - 1}")
    shifted = logits2 - logits2.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - shifted[rows, classes]))
    grad = softmax(logits2)
    grad[rows, classes] -= 1.0
    grad /= n
    return loss, (grad[0] if single else grad)


def penalties(weights: Iterable[Tensor], activations: Optional[Tensor],
              lambda_w: float, lambda_a: float) -> Tuple[float, List[Tensor], Optional[Tensor]]:
    """
    L2 weight and L1 activity penalties.

    Returns:
        (lambda_w * sum w^2 + lambda_a * sum |a|, [2 lambda_w w per weight tensor],
         lambda_a * sign(a) with sign(0) = 0, or None without activations)
    """
    if lambda_w < 0 or lambda_a < 0:
        raise ValueError("penalty rates must be non-negative")
    weights = list(weights)
    loss = lambda_w * sum(float(np.sum(w * w)) for w in weights)
    weight_grads = [2.0 * lambda_w * w for w in weights]
    activation_grad = None
    if activations is not None:
        loss += lambda_a * float(np.sum(np.abs(activations)))
        activation_grad = lambda_a * np.sign(activations)
    return loss, weight_grads, activation_grad


# ==================== OPTIMIZER ====================

def adadelta_step(param: np.ndarray, grad: np.ndarray, square_avg: np.ndarray, delta_avg: np.ndarray,
                  hp: AdadeltaParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    One Adadelta update.

        E[g^2]  <- rho E[g^2] + (1 - rho) g^2
        delta   =  -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
        E[dx^2] <- rho E[dx^2] + (1 - rho) delta^2
        param   += lr * delta

    Returns:
        (new param, new E[g^2], new E[dx^2])

    Raises:
        NonFiniteError: the gradient holds NaN or inf
    """
    if param.shape != grad.shape:
        raise ShapeMismatchError(f"parameter {param.shape} vs gradient {grad.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite gradient passed to Adadelta")
    rho, eps = hp.rho, hp.epsilon
    square_avg = rho * square_avg + (1.0 - rho) * grad * grad
    delta = -np.sqrt(delta_avg + eps) / np.sqrt(square_avg + eps) * grad
    delta_avg = rho * delta_avg + (1.0 - rho) * delta * delta
    param = param + hp.learning_rate * delta
    return param.astype(grad.dtype, copy=False), square_avg, delta_avg


class Adadelta:
    """Applies adadelta_step to a list of parameters; a single writer per step."""

    def __init__(self, params: Sequence[Parameter], hp: Optional[AdadeltaParams] = None):
        self.params = list(params)
        self.hp = hp or AdadeltaParams()

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for p in self.params:
            p.value, p.square_avg, p.delta_avg = adadelta_step(p.value, p.grad, p.square_avg, p.delta_avg, self.hp)
