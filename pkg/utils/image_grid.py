"""
Image Grids
Tiles SOM prototypes or convolution kernels into one grayscale PNG for visual inspection.
"""

import math
from pathlib import Path
from typing import Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def tile(images: np.ndarray, columns: Optional[int] = None, border: int = 1) -> np.ndarray:
    """
    Arrange a stack of 2-D images (n, h, w) into one grid, each tile min-max scaled to [0, 1].

    Args:
        images: Stack of images
        columns: Tiles per row (squarest layout when None)
        border: Pixels of background between tiles
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3:
        raise ValueError(f"expected (n, h, w) images, got shape {images.shape}")
    n, h, w = images.shape
    columns = columns or int(math.ceil(math.sqrt(n)))
    rows = int(math.ceil(n / columns))

    canvas = np.zeros((rows * (h + border) + border, columns * (w + border) + border))
    for i, img in enumerate(images):
        lo, hi = img.min(), img.max()
        scaled = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
        r, c = divmod(i, columns)
        y = border + r * (h + border)
        x = border + c * (w + border)
        canvas[y:y + h, x:x + w] = scaled
    return canvas


def save_image(path: Union[str, Path], image: np.ndarray) -> Path:
    """Save a [0, 1] grayscale image as a PNG, one pixel per array cell."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    plt.imsave(path, np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0),
               cmap="gray", vmin=0.0, vmax=1.0, format="png")
    return path


def dump_prototypes(path: Union[str, Path], weights: np.ndarray, grid_width: int,
                    image_shape=(28, 28)) -> Optional[Path]:
    """Save SOM prototypes as a grid laid out like the map; skipped when weights are not images."""
    weights = np.asarray(weights)
    if weights.shape[1] != image_shape[0] * image_shape[1]:
        return None
    return save_image(path, tile(weights.reshape((-1,) + tuple(image_shape)), columns=grid_width))


def dump_kernels(path: Union[str, Path], kernels: np.ndarray) -> Path:
    """Save the first input channel of every (out, in, kh, kw) kernel as a grid."""
    kernels = np.asarray(kernels)
    return save_image(path, tile(kernels[:, 0]))
