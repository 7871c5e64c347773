"""
Versioned Containers
Every artifact the lab writes (SOM grids, neuron-label tables, model checkpoints,
SNN checkpoints, feature dumps) is a single .npz archive: named arrays plus a
JSON metadata block holding the container kind and format version.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from models.errors import ContainerError

logger = logging.getLogger(__name__)

CONTAINER_VERSION = 1
_META_KEY = "__meta__"

PathLike = Union[str, Path]


def _with_suffix(path: PathLike) -> Path:
    path = Path(path)
    return path if path.suffix == ".npz" else path.with_name(path.name + ".npz")


def write_container(path: PathLike, kind: str, arrays: Dict[str, np.ndarray],
                    meta: Dict[str, Any] = None) -> Path:
    """
    Write arrays and metadata to an .npz container.

    Args:
        path: Destination (".npz" appended when missing)
        kind: Container kind, checked again on read (e.g. "som_grid")
        arrays: Named arrays, stored bit-exact
        meta: JSON-serializable metadata

    Returns:
        The path actually written
    """
    path = _with_suffix(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"kind": kind, "version": CONTAINER_VERSION, "meta": meta or {}}
    payload = {name: np.asarray(value) for name, value in arrays.items()}
    if _META_KEY in payload:
        raise ContainerError(f"array name {_META_KEY!r} is reserved")
    payload[_META_KEY] = np.array(json.dumps(header, sort_keys=True))
    with open(path, "wb") as f:
        np.savez(f, **payload)
    logger.debug("✓ Wrote %s container to %s", kind, path)
    return path


def read_container(path: PathLike, kind: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """
    Read a container written by write_container.

    Raises:
        ContainerError: missing file, foreign kind or unsupported version
    """
    path = _with_suffix(path)
    if not path.exists():
        raise ContainerError(f"container not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            header = json.loads(str(archive[_META_KEY]))
            arrays = {name: archive[name] for name in archive.files if name != _META_KEY}
    except (KeyError, ValueError, OSError) as e:
        raise ContainerError(f"unreadable container {path}: {e}") from e

    if header.get("kind") != kind:
        raise ContainerError(f"{path} holds a {header.get('kind')!r} container, expected {kind!r}")
    if header.get("version") != CONTAINER_VERSION:
        raise ContainerError(f"{path} has version {header.get('version')}, expected {CONTAINER_VERSION}")
    return arrays, header["meta"]
