"""
Feature Sets
Loads MNIST, trains the configured extractor once per experiment, and produces the
train/test feature matrices the SOM consumes. Matrices are cached as feature dumps
so reruns skip extractor training.
"""

import hashlib
import json
import logging
import time
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from models import scae as conv_models
from models import snn as spiking
from models.dataset import DatasetSplit, LabeledDataset, load_idx
from models.errors import DimensionMismatchError
from models.schemas import DataConfig, ExperimentConfig, Extractor
from utils.containers import read_container, write_container
from utils.image_grid import dump_kernels
from utils.seeding import derive_seed

logger = logging.getLogger(__name__)

FEATURES_KIND = "features"


class FeatureSet:
    """
    Train and test feature matrices with their class ids.

    Attributes:
        train (np.ndarray): (n_train, D) features
        train_labels (np.ndarray): (n_train,) class ids
        test (np.ndarray): (n_test, D) features
        test_labels (np.ndarray): (n_test,) class ids
        extractor (Extractor): Feature source
        topology (str): Extractor topology string ("784" for raw pixels)
        seed (int): Seed the extractor was trained with
        info (Dict): Extractor training summary (losses, convergence, supervised accuracy)
    """

    def __init__(self, train: np.ndarray, train_labels: np.ndarray, test: np.ndarray, test_labels: np.ndarray,
                 extractor: Extractor, topology: str, seed: int, info: Optional[Dict] = None):
        if train.ndim != 2 or test.ndim != 2 or train.shape[1] != test.shape[1]:
            raise DimensionMismatchError(f"train features {train.shape} and test features {test.shape} disagree")
        self.train = train
        self.train_labels = np.asarray(train_labels)
        self.test = test
        self.test_labels = np.asarray(test_labels)
        self.extractor = Extractor(extractor)
        self.topology = topology
        self.seed = seed
        self.info = info or {}

    @property
    def dim(self) -> int:
        return self.train.shape[1]

    def normalized(self) -> "FeatureSet":
        """
        Copy with every feature min-max scaled using train statistics.

        Test features outside the train range are clipped, so both splits lie in [0, 1].
        """
        lo = self.train.min(axis=0)
        span = self.train.max(axis=0) - lo
        span[span == 0] = 1.0
        return FeatureSet((self.train - lo) / span, self.train_labels, np.clip((self.test - lo) / span, 0.0, 1.0),
                          self.test_labels, self.extractor, self.topology, self.seed, self.info)

    def to_dict(self) -> Dict:
        return {
            "extractor": self.extractor.value,
            "topology": self.topology,
            "seed": self.seed,
            "dim": self.dim,
            "train_count": int(self.train.shape[0]),
            "test_count": int(self.test.shape[0]),
            **self.info,
        }


def load_data(cfg: DataConfig) -> Tuple[LabeledDataset, LabeledDataset]:
    """Train and test splits, cut to the configured limits."""
    train = load_idx(cfg.train_images, cfg.train_labels, DatasetSplit.TRAIN).head(cfg.train_limit)
    test = load_idx(cfg.test_images, cfg.test_labels, DatasetSplit.TEST).head(cfg.test_limit)
    return train, test


# ==================== FEATURE DUMPS ====================

def save_features(path, features: FeatureSet) -> Path:
    arrays = {
        "train": features.train,
        "train_labels": features.train_labels,
        "test": features.test,
        "test_labels": features.test_labels,
    }
    meta = {
        "extractor": features.extractor.value,
        "topology": features.topology,
        "seed": features.seed,
        "info": features.info,
    }
    return write_container(path, FEATURES_KIND, arrays, meta)


def load_features(path) -> FeatureSet:
    arrays, meta = read_container(path, FEATURES_KIND)
    return FeatureSet(arrays["train"], arrays["train_labels"], arrays["test"], arrays["test_labels"],
                      Extractor(meta["extractor"]), meta["topology"], meta["seed"], meta.get("info"))


def cache_key(cfg: ExperimentConfig) -> str:
    """Digest of everything the feature matrices depend on."""
    section = {
        Extractor.RAW: None,
        Extractor.SCAE: cfg.scae,
        Extractor.CAE: cfg.scae,
        Extractor.CNN: cfg.cnn,
        Extractor.SNN: cfg.snn,
    }[cfg.extractor]
    payload = {
        "extractor": cfg.extractor.value,
        "section": section.model_dump(mode="json") if section is not None else None,
        "data": cfg.data.model_dump(mode="json"),
        "seed": cfg.seed,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()[:12]


def feature_dump_path(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir) / "features" / f"{cfg.extractor.value}-{cache_key(cfg)}.npz"


# ==================== EXTRACTORS ====================

def _autoencoder(cfg: ExperimentConfig, train: LabeledDataset, test: LabeledDataset, seed: int,
                 artifacts: Dict[str, str]) -> FeatureSet:
    c = cfg.scae
    sparse = cfg.extractor == Extractor.SCAE
    model = conv_models.ScaeModel(c.feature_maps, c.hidden_maps,
                                  lambda_weights=c.lambda_weights if sparse else 0.0,
                                  lambda_activity=c.lambda_activity if sparse else 0.0, seed=seed)
    _, history = conv_models.train_scae(model, train.head(c.train_limit).images, c.epochs, c.batch_size,
                                        seed, c.optimizer)
    run_dir = Path(cfg.output_dir) / cfg.name
    artifacts["model"] = str(conv_models.save_model(run_dir / f"{cfg.extractor.value}-model", model))
    if cfg.dump_images:
        artifacts["kernels"] = str(dump_kernels(run_dir / "conv1-kernels.png", model.conv1.kernels.value))
    test_x = conv_models.extract_features(model, test.images)
    info = {"training": history.to_dict(), "parameters": model.parameter_count(),
            "mean_code_activation": float(np.mean(np.abs(test_x)))}
    return FeatureSet(conv_models.extract_features(model, train.images), train.labels, test_x, test.labels,
                      cfg.extractor, model.topology, seed, info)


def _cnn(cfg: ExperimentConfig, train: LabeledDataset, test: LabeledDataset, seed: int,
         artifacts: Dict[str, str]) -> FeatureSet:
    c = cfg.cnn
    model = conv_models.CnnBaselineModel(c.feature_maps, c.hidden_maps, seed=seed)
    _, history = conv_models.train_cnn_baseline(model, train.head(c.train_limit), c.epochs, c.batch_size,
                                                seed, c.optimizer, test=test)
    run_dir = Path(cfg.output_dir) / cfg.name
    artifacts["model"] = str(conv_models.save_model(run_dir / "cnn-model", model))
    info = {"training": history.to_dict(), "parameters": model.parameter_count(),
            "supervised_accuracy": history.test_accuracy}
    return FeatureSet(conv_models.extract_features(model, train.images), train.labels,
                      conv_models.extract_features(model, test.images), test.labels,
                      cfg.extractor, model.topology, seed, info)


def _snn(cfg: ExperimentConfig, train: LabeledDataset, test: LabeledDataset, seed: int,
         artifacts: Dict[str, str]) -> FeatureSet:
    net = spiking.train_layerwise(train.head(cfg.snn.train_limit).images, cfg.snn, seed)
    run_dir = Path(cfg.output_dir) / cfg.name
    artifacts["model"] = str(spiking.save_snn(run_dir / "snn-model", net))
    if cfg.dump_images:
        artifacts["kernels"] = str(dump_kernels(run_dir / "conv1-kernels.png", net.conv1.weights))
    started = time.time()
    train_x = spiking.extract_features(net, train.images)
    test_x = spiking.extract_features(net, test.images)
    logger.info("✓ Extracted %d spiking features per image in %.1fs", net.feature_length, time.time() - started)
    return FeatureSet(train_x, train.labels, test_x, test.labels, cfg.extractor, net.topology, seed,
                      {"training": net.training_log})


def extract(cfg: ExperimentConfig, train: LabeledDataset, test: LabeledDataset,
            artifacts: Optional[Dict[str, str]] = None) -> FeatureSet:
    """
    Train the configured extractor on the train split (reusing a cached dump when allowed)
    and return the feature matrices of both splits.

    Args:
        cfg: Experiment configuration
        train: Training split; only the gradient baseline reads its labels
        test: Test split
        artifacts: Filled with the paths of checkpoints and dumps that were written
    """
    artifacts = artifacts if artifacts is not None else {}
    if cfg.extractor == Extractor.RAW:
        return FeatureSet(train.flat(), train.labels, test.flat(), test.labels, Extractor.RAW, "784", 0)

    path = feature_dump_path(cfg)
    if cfg.cache_features and path.exists():
        logger.info("→ Reusing feature dump %s", path)
        artifacts["features"] = str(path)
        return load_features(path)

    seed = derive_seed(cfg.seed, "extractor")
    logger.info("→ Training %s extractor (seed %d)", cfg.extractor.value, seed)
    builders = {
        Extractor.SCAE: _autoencoder,
        Extractor.CAE: _autoencoder,
        Extractor.CNN: _cnn,
        Extractor.SNN: _snn,
    }
    features = builders[cfg.extractor](cfg, train, test, seed, artifacts)
    artifacts["features"] = str(save_features(path, features))
    logger.info("✓ %s features: %d dimensions", features.topology, features.dim)
    return features
