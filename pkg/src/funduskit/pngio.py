"""PNG reading and writing for rasters and binary masks.

Rasters are uint8 numpy arrays, shape (H, W) for grayscale or (H, W, 3) for
RGB. Masks are boolean (H, W) arrays; on disk any nonzero pixel counts as
foreground, and masks are written as 8-bit grayscale 0/255.
"""

from pathlib import Path

import numpy as np
from PIL import Image


def read_raster(path) -> np.ndarray:
    """Load a PNG as uint8 grayscale (H, W) or RGB (H, W, 3)."""
    with Image.open(path) as im:
        if im.mode == "L":
            arr = np.asarray(im, dtype=np.uint8)
        elif im.mode in ("1", "I;16", "I", "LA"):
            arr = np.asarray(im.convert("L"), dtype=np.uint8)
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr


def write_raster(path, img: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(img, dtype=np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def read_mask(path) -> np.ndarray:
    """Load a PNG as a boolean mask; any nonzero channel value is foreground."""
    arr = read_raster(path)
    if arr.ndim == 3:
        return arr.max(axis=2) > 0
    return arr > 0


def write_mask(path, mask: np.ndarray) -> None:
    write_raster(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))
