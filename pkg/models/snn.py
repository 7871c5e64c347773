"""
Spiking Feature Extractor
DoG contrast encoding into single-spike latencies, integrate-and-fire convolutions,
first-spike pooling, k-winner-take-all with lateral inhibition, and layer-wise
multiplicative STDP. The trained network reads out conv2 potentials at an infinite
threshold as real-valued features.
"""

import logging
import time
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from models.convnet import correlate, pad2d
from models.errors import ContainerError, ShapeMismatchError
from models.schemas import SnnConfig, StdpConfig
from utils.containers import read_container, write_container

logger = logging.getLogger(__name__)

SNN_KIND = "snn_model"
KERNEL = 5


class SpikeWave:
    """
    Time-binned activity of one layer for one stimulus.

    Attributes:
        spikes (np.ndarray): bool (T, C, H, W); every (c, y, x) fires at most once
        potentials (np.ndarray): float64 (T, C, H, W), non-negative membrane potentials
    """

    def __init__(self, spikes: np.ndarray, potentials: np.ndarray):
        if spikes.shape != potentials.shape or spikes.ndim != 4:
            raise ShapeMismatchError(f"spikes {spikes.shape} and potentials {potentials.shape} must be (T, C, H, W)")
        self.spikes = spikes.astype(bool, copy=False)
        self.potentials = potentials

    @classmethod
    def from_times(cls, times: np.ndarray, potentials: np.ndarray, time_steps: Optional[int] = None) -> "SpikeWave":
        """Wave whose (C, H, W) first-spike times are given; time_steps means no spike."""
        if time_steps is None:
            time_steps = potentials.shape[0]
        return cls(one_hot_times(times, time_steps), potentials)

    @property
    def time_steps(self) -> int:
        return self.spikes.shape[0]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.spikes.shape[1:]

    def first_spike_times(self) -> np.ndarray:
        """(C, H, W) spike bin of every neuron, time_steps where it never fired."""
        fired = self.spikes.any(axis=0)
        return np.where(fired, self.spikes.argmax(axis=0), self.time_steps)

    def final_potentials(self) -> np.ndarray:
        return self.potentials[-1]

    def spike_count(self) -> int:
        return int(self.spikes.sum())


def one_hot_times(times: np.ndarray, time_steps: int) -> np.ndarray:
    return np.arange(time_steps)[:, None, None, None] == np.asarray(times)[None]


# ==================== ENCODING ====================

def dog_kernel(size: int = 7, sigma1: float = 1.0, sigma2: float = 2.0) -> np.ndarray:
    """On-center difference of Gaussians, mean-zeroed and scaled to a maximum of 1."""
    half = size // 2
    y, x = np.mgrid[-half:half + 1, -half:half + 1]
    r2 = x * x + y * y
    g1 = np.exp(-0.5 * r2 / sigma1 ** 2) / sigma1 ** 2
    g2 = np.exp(-0.5 * r2 / sigma2 ** 2) / sigma2 ** 2
    dog = (g1 - g2) / (2.0 * np.pi)
    dog -= dog.mean()
    return dog / dog.max()


def dog_response(image: np.ndarray, size: int = 7, sigmas: Sequence[float] = (1.0, 2.0),
                 threshold: float = 50.0) -> np.ndarray:
    """Rectified (2, H, W) on/off-center responses on 0-255 pixels; sub-threshold values are 0."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ShapeMismatchError(f"expected one (H, W) image, got shape {image.shape}")
    if image.size and (image.min() < 0 or image.max() > 1):
        raise ValueError("image pixels must lie in [0, 1]")
    on = dog_kernel(size, *sigmas)
    kernels = np.stack([on, -on])[:, None]
    half = size // 2
    # edge padding: a constant image has no contrast at the border either
    padded = np.pad(image * 255.0, half, mode="edge")[None, None]
    response = correlate(padded, kernels)[0]
    response[response < max(threshold, np.finfo(np.float64).tiny)] = 0.0
    return response


def latency_bins(response: np.ndarray, time_steps: int) -> np.ndarray:
    """
    Intensity-to-latency code: rank positive responses by descending value (flat index
    on ties) and give rank r the bin r * T // count. Zero responses get T (never).
    """
    flat = response.ravel()
    positive = np.flatnonzero(flat > 0)
    times = np.full(flat.shape, time_steps, dtype=np.int64)
    if positive.size:
        order = positive[np.argsort(-flat[positive], kind="stable")]
        times[order] = np.arange(order.size) * time_steps // order.size
    return times.reshape(response.shape)


def dog_encode(image: np.ndarray, time_steps: int = 15, size: int = 7,
               sigmas: Sequence[float] = (1.0, 2.0), threshold: float = 50.0) -> SpikeWave:
    """
    Encode a [0, 1] image as on/off DoG spikes; the stronger the contrast the earlier the spike.

    Input potentials hold the response from the spike bin onwards.
    """
    response = dog_response(image, size, sigmas, threshold)
    times = latency_bins(response, time_steps)
    spikes = one_hot_times(times, time_steps)
    potentials = np.where(np.cumsum(spikes, axis=0) > 0, response[None], 0.0)
    return SpikeWave(spikes, potentials)


# ==================== LAYERS ====================

class SnnConvLayer:
    """
    Integrate-and-fire convolution.

    Attributes:
        weights (np.ndarray): float64 (out_maps, in_maps, 5, 5), kept in [0, 1]
        padding (int): Zeros (never-spiking inputs) added on each side
    """

    def __init__(self, weights: np.ndarray, padding: int = 0):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 4:
            raise ShapeMismatchError(f"kernels must be (out, in, kh, kw), got {weights.shape}")
        self.weights = weights
        self.padding = int(padding)

    @classmethod
    def create(cls, in_maps: int, out_maps: int, padding: int, mean: float, std: float,
               rng: np.random.Generator) -> "SnnConvLayer":
        weights = rng.normal(mean, std, size=(out_maps, in_maps, KERNEL, KERNEL))
        return cls(np.clip(weights, 0.0, 1.0), padding)

    @property
    def out_maps(self) -> int:
        return self.weights.shape[0]

    @property
    def in_maps(self) -> int:
        return self.weights.shape[1]

    def convergence(self) -> float:
        """Mean w(1 - w); goes to 0 as every weight saturates at 0 or 1."""
        return float(np.mean(self.weights * (1.0 - self.weights)))


def if_conv_forward(wave: SpikeWave, layer: SnnConvLayer, threshold: float) -> SpikeWave:
    """
    potential(t) = sum over t' <= t of conv(spikes(t'), weights). A neuron spikes in the
    first bin where potential >= threshold and never again. With an infinite threshold
    nothing spikes and the potentials are the full temporal sums.
    """
    if wave.shape[0] != layer.in_maps:
        raise ShapeMismatchError(f"{wave.shape[0]} input maps for a layer expecting {layer.in_maps}")
    cumulative = np.cumsum(wave.spikes, axis=0, dtype=np.float64)
    potentials = correlate(pad2d(cumulative, layer.padding), layer.weights)
    if np.isinf(threshold):
        return SpikeWave(np.zeros(potentials.shape, dtype=bool), potentials)
    fired = potentials >= threshold
    times = np.where(fired.any(axis=0), fired.argmax(axis=0), wave.time_steps)
    return SpikeWave(one_hot_times(times, wave.time_steps), potentials)


def _pool_view(x: np.ndarray, k: int, s: int, pad: int, fill) -> np.ndarray:
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    padded = np.pad(x, widths, constant_values=fill)
    if padded.shape[-2] < k or padded.shape[-1] < k:
        raise ShapeMismatchError(f"{k}x{k} window larger than padded input {padded.shape[-2:]}")
    return sliding_window_view(padded, (k, k), axis=(-2, -1))[..., ::s, ::s, :, :]


def pool_potentials(potentials: np.ndarray, k: int = 2, s: int = 2, pad: int = 1) -> np.ndarray:
    """Window maximum of non-negative potentials over the last two axes."""
    return _pool_view(potentials, k, s, pad, 0.0).max(axis=(-2, -1))


def spike_pool(wave: SpikeWave, k: int = 2, s: int = 2, pad: int = 1) -> SpikeWave:
    """
    First-spike pooling: an output neuron fires at the earliest spike of its window
    (once), its potential is the window maximum. Output side floor((n + 2 pad - k) / s) + 1.
    """
    times = _pool_view(wave.first_spike_times(), k, s, pad, wave.time_steps).min(axis=(-2, -1))
    return SpikeWave.from_times(times, pool_potentials(wave.potentials, k, s, pad), wave.time_steps)


# ==================== COMPETITION & PLASTICITY ====================

class Winner(NamedTuple):
    """A neuron selected to learn: map, position, spike bin, potential at that bin."""
    map: int
    row: int
    col: int
    time: int
    potential: float


def select_winners(wave: SpikeWave, kwta: int, radius: int) -> List[Winner]:
    """
    Greedy k-winner-take-all: take the earliest spike (then the highest potential at its
    spike bin, then the lowest flat index), suppress its whole map and every map within
    Chebyshev distance radius of it, and repeat until kwta winners or no candidate is left.
    """
    if kwta < 1:
        raise ValueError("kwta must be at least 1")
    times = wave.first_spike_times()
    flat_times = times.ravel()
    candidates = np.flatnonzero(flat_times < wave.time_steps)
    if candidates.size == 0:
        return []
    at_spike = np.take_along_axis(wave.potentials, np.minimum(times, wave.time_steps - 1)[None], axis=0)[0]
    potentials = at_spike.ravel()[candidates]
    order = candidates[np.lexsort((candidates, -potentials, flat_times[candidates]))]

    winners: List[Winner] = []
    used_maps = set()
    for idx in order:
        m, r, c = (int(v) for v in np.unravel_index(idx, times.shape))
        if m in used_maps:
            continue
        if any(max(abs(r - w.row), abs(c - w.col)) <= radius for w in winners):
            continue
        winners.append(Winner(m, r, c, int(flat_times[idx]), float(at_spike[m, r, c])))
        used_maps.add(m)
        if len(winners) == kwta:
            break
    return winners


def stdp_update(layer: SnnConvLayer, wave_in: SpikeWave, winners: Sequence[Winner],
                a_plus: float, a_minus: float) -> SnnConvLayer:
    """
    Multiplicative STDP on each winner's kernel: dw = a_plus w (1 - w) where the
    pre-synaptic input spiked at or before the winner, a_minus w (1 - w) otherwise
    (padding counts as never spiking). Weights are clamped to [0, 1]; updated in place.
    """
    pre_times = wave_in.first_spike_times()
    if layer.padding:
        p = layer.padding
        pre_times = np.pad(pre_times, ((0, 0), (p, p), (p, p)), constant_values=wave_in.time_steps)
    _, _, kh, kw = layer.weights.shape
    for w in winners:
        patch = pre_times[:, w.row:w.row + kh, w.col:w.col + kw]
        kernel = layer.weights[w.map]
        rate = np.where(patch <= w.time, a_plus, a_minus)
        kernel += rate * kernel * (1.0 - kernel)
        np.clip(kernel, 0.0, 1.0, out=kernel)
    return layer


class StdpRates:
    """Current learning rates; with adaptive_rate a_plus doubles every interval stimuli (capped)."""

    def __init__(self, cfg: StdpConfig):
        self.cfg = cfg
        self.a_plus = cfg.a_plus
        self.a_minus = cfg.a_minus
        self.stimuli = 0

    def tick(self):
        self.stimuli += 1
        if self.cfg.adaptive_rate and self.stimuli % self.cfg.rate_update_interval == 0:
            self.a_plus = min(2.0 * self.a_plus, self.cfg.a_plus_max)
            self.a_minus = -0.75 * self.a_plus


# ==================== NETWORK ====================

class SpikingNetwork:
    """
    DoG(2 maps) -> conv1(hidden, same) -> [pool 2/2/1] -> pad 1 -> conv2(X, valid) -> pool 2/2/1.

    pooling_scheme "first_spike" pools after both convolutions (X x 7 x 7 features);
    "single" skips the first pooling (X x 14 x 14 features).
    """

    def __init__(self, cfg: SnnConfig, conv1: SnnConvLayer, conv2: SnnConvLayer, seed: int = 0):
        self.cfg = cfg
        self.conv1 = conv1
        self.conv2 = conv2
        self.seed = seed
        self.training_log: Dict[str, Dict] = {}

    @classmethod
    def create(cls, cfg: SnnConfig, seed: int = 0) -> "SpikingNetwork":
        rng = np.random.default_rng(seed)
        conv1 = SnnConvLayer.create(2, cfg.hidden_maps, KERNEL // 2, cfg.weight_mean, cfg.weight_std, rng)
        conv2 = SnnConvLayer.create(cfg.hidden_maps, cfg.feature_maps, 1, cfg.weight_mean, cfg.weight_std, rng)
        return cls(cfg, conv1, conv2, seed)

    @property
    def topology(self) -> str:
        pool1 = "-p2" if self.cfg.pooling_scheme == "first_spike" else ""
        return f"{self.cfg.hidden_maps}c5{pool1}-{self.cfg.feature_maps}c5-p2"

    @property
    def feature_shape(self) -> Tuple[int, int, int]:
        side = 7 if self.cfg.pooling_scheme == "first_spike" else 14
        return self.cfg.feature_maps, side, side

    @property
    def feature_length(self) -> int:
        return int(np.prod(self.feature_shape))

    def encode(self, image: np.ndarray) -> SpikeWave:
        c = self.cfg
        return dog_encode(image, c.time_steps, c.dog_size, c.dog_sigmas, c.dog_threshold)

    def conv2_input(self, image: np.ndarray) -> SpikeWave:
        """Spikes reaching conv2 (before its padding)."""
        wave = if_conv_forward(self.encode(image), self.conv1, self.cfg.conv1_threshold)
        if self.cfg.pooling_scheme == "first_spike":
            wave = spike_pool(wave, 2, 2, 1)
        return wave

    def features(self, image: np.ndarray) -> np.ndarray:
        """conv2 final potentials at infinite threshold, max-pooled and flattened."""
        wave = self.conv2_input(image)
        total = wave.spikes.sum(axis=0, dtype=np.float64)[None]
        final = correlate(pad2d(total, self.conv2.padding), self.conv2.weights)[0]
        return pool_potentials(final, 2, 2, 1).ravel()


def _train_layer(net: SpikingNetwork, layer_name: str, images: np.ndarray, rng: np.random.Generator,
                 present) -> Dict:
    """Run STDP passes on one layer; present(image) returns (input wave, output wave)."""
    cfg = net.cfg.stdp
    layer: SnnConvLayer = getattr(net, layer_name)
    rates = StdpRates(cfg)
    metrics = [layer.convergence()]
    converged = metrics[0] < cfg.convergence_threshold

    for p in range(cfg.max_passes):
        if converged:
            break
        started = time.time()
        for idx in rng.permutation(len(images)):
            wave_in, wave_out = present(images[idx])
            winners = select_winners(wave_out, cfg.kwta, cfg.inhibition_radius)
            stdp_update(layer, wave_in, winners, rates.a_plus, rates.a_minus)
            rates.tick()
            if rates.stimuli % cfg.rate_update_interval == 0 and layer.convergence() < cfg.convergence_threshold:
                converged = True
                break
        metrics.append(layer.convergence())
        converged = converged or metrics[-1] < cfg.convergence_threshold
        logger.info("  %s pass %d/%d: mean w(1-w)=%.5f a_plus=%.4f (%.1fs)", layer_name, p + 1,
                    cfg.max_passes, metrics[-1], rates.a_plus, time.time() - started)

    if converged:
        logger.info("✓ %s converged after %d stimuli", layer_name, rates.stimuli)
    else:
        logger.warning("⚠️ %s did not converge: mean w(1-w)=%.5f after %d passes",
                       layer_name, metrics[-1], cfg.max_passes)
    return {"converged": converged, "convergence": metrics, "stimuli": rates.stimuli}


def train_layerwise(images: np.ndarray, cfg: SnnConfig, seed: int) -> SpikingNetwork:
    """
    Train conv1 with STDP (conv2 unused), then conv2 with conv1 frozen. Takes images only.

    Non-convergence within max_passes is logged and recorded in training_log, not raised.
    """
    images = np.asarray(images)
    net = SpikingNetwork.create(cfg, seed)
    rng = np.random.default_rng(seed)

    def present_conv1(image):
        wave_in = net.encode(image)
        return wave_in, if_conv_forward(wave_in, net.conv1, cfg.conv1_threshold)

    def present_conv2(image):
        wave_in = net.conv2_input(image)
        return wave_in, if_conv_forward(wave_in, net.conv2, cfg.conv2_train_threshold)

    logger.info("→ STDP training %s on %d images", net.topology, len(images))
    net.training_log["conv1"] = _train_layer(net, "conv1", images, rng, present_conv1)
    net.training_log["conv2"] = _train_layer(net, "conv2", images, rng, present_conv2)
    return net


def extract_features(net: SpikingNetwork, images: np.ndarray) -> np.ndarray:
    """Feature matrix (N, feature_length); extraction is pure, so repeated calls agree."""
    images = np.asarray(images)
    out = np.empty((len(images), net.feature_length), dtype=np.float64)
    for i, image in enumerate(images):
        out[i] = net.features(image)
    return out


# ==================== CHECKPOINTS ====================

def save_snn(path, net: SpikingNetwork, extra: Optional[Dict] = None):
    meta = {
        "config": net.cfg.model_dump(mode="json"),
        "topology": net.topology,
        "seed": net.seed,
        "training_log": net.training_log,
    }
    meta.update(extra or {})
    return write_container(path, SNN_KIND, {"conv1": net.conv1.weights, "conv2": net.conv2.weights}, meta)


def load_snn(path) -> SpikingNetwork:
    arrays, meta = read_container(path, SNN_KIND)
    cfg = SnnConfig.model_validate(meta["config"])
    net = SpikingNetwork.create(cfg, meta["seed"])
    for name in ("conv1", "conv2"):
        layer: SnnConvLayer = getattr(net, name)
        if arrays[name].shape != layer.weights.shape:
            raise ContainerError(f"{path}: {name} kernels have shape {arrays[name].shape}")
        layer.weights = arrays[name].astype(np.float64)
    net.training_log = meta.get("training_log", {})
    return net
