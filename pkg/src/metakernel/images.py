"""Image I/O and color helpers: 8/16-bit PNGs exchanged as [0,1] float arrays."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def load_image(path) -> np.ndarray:
    """Read an image into float64 [0,1], shape (H, W) or (H, W, 3)."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode in ("L", "RGB"):
            arr = np.asarray(im, dtype=np.float64) / 255.0
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def save_image(img: np.ndarray, path) -> Path:
    """Write a [0,1] float array as an 8-bit PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data).save(path)
    return path


def luminance(img: np.ndarray) -> np.ndarray:
    """BT.601 luma in [0,1]; grayscale passes through."""
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ np.array([0.299, 0.587, 0.114])
    raise ValueError(f"expected (H,W) or (H,W,3) image, got shape {img.shape}")


def list_dataset(directory) -> list[Path]:
    """All image files directly under a dataset directory, sorted by name."""
    directory = Path(directory)
    return sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    )
