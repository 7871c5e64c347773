"""
Experiment Presets
Named partial configurations: desk-scale runs that finish in minutes and full-scale
reproduction runs. A preset is merged under user overrides to build an ExperimentConfig.
"""

import copy
import json
from pathlib import Path
from typing import Any, Dict, Optional

from models.schemas import ExperimentConfig

_DESK_DATA = {"train_limit": 10000}

PRESETS: Dict[str, Dict[str, Any]] = {
    "desk-raw": {
        "extractor": "raw",
        "data": _DESK_DATA,
        "label_fraction": 0.01,
        "repetitions": 3,
    },
    "desk-scae": {
        "extractor": "scae",
        "data": _DESK_DATA,
        "scae": {"feature_maps": 32, "epochs": 10, "train_limit": 10000},
        "label_fraction": 0.1,
        "repetitions": 3,
    },
    "desk-cae": {
        "extractor": "cae",
        "data": _DESK_DATA,
        "scae": {"feature_maps": 32, "epochs": 10, "train_limit": 10000},
        "label_fraction": 0.1,
        "repetitions": 3,
    },
    "desk-snn": {
        "extractor": "snn",
        "data": _DESK_DATA,
        "snn": {"feature_maps": 64, "train_limit": 10000},
        "label_fraction": 0.1,
        "repetitions": 3,
    },
    "desk-cnn": {
        "extractor": "cnn",
        "data": _DESK_DATA,
        "cnn": {"feature_maps": 32, "epochs": 10, "train_limit": 10000},
        "label_fraction": 0.1,
        "repetitions": 3,
    },
    "full-raw": {
        "extractor": "raw",
        "label_fraction": 0.01,
        "repetitions": 10,
    },
    "full-scae": {
        "extractor": "scae",
        "scae": {"feature_maps": 256, "epochs": 100, "train_limit": None},
        "label_fraction": 0.01,
        "repetitions": 10,
    },
    "full-cae": {
        "extractor": "cae",
        "scae": {"feature_maps": 256, "epochs": 100, "train_limit": None},
        "label_fraction": 0.01,
        "repetitions": 10,
    },
    "full-snn": {
        "extractor": "snn",
        "snn": {"feature_maps": 64, "train_limit": None},
        "label_fraction": 0.01,
        "repetitions": 10,
    },
    "full-cnn": {
        "extractor": "cnn",
        "cnn": {"feature_maps": 256, "epochs": 100, "train_limit": None},
        "label_fraction": 0.01,
        "repetitions": 10,
    },
}


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Nested dict merge; values in override win, sub-dicts merge recursively."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def build_config(preset: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    ExperimentConfig from a preset plus overrides.

    Raises:
        ValueError: unknown preset, or a merged config that fails validation
    """
    base: Dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; choose from {', '.join(sorted(PRESETS))}")
        base = {"name": preset, **PRESETS[preset]}
    return ExperimentConfig.model_validate(deep_merge(base, overrides or {}))


def load_config_file(path) -> Dict[str, Any]:
    """Raw overrides from a JSON config file."""
    return json.loads(Path(path).read_text())
