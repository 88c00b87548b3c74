"""Shared bits for the demo scripts: a procedural test image and an output dir."""

from pathlib import Path

import numpy as np

OUT_DIR = Path(__file__).parent / "output"
OUT_DIR.mkdir(exist_ok=True)


def textured_image(seed: int, size: int = 256) -> np.ndarray:
    """Edge-rich piecewise-constant image: a stand-in for a natural photo."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    sites = rng.uniform(0, size, size=(size // 8, 2))
    levels = rng.uniform(0.1, 0.9, size=len(sites))
    d2 = (yy[..., None] - sites[:, 0]) ** 2 + (xx[..., None] - sites[:, 1]) ** 2
    img = levels[np.argmin(d2, axis=-1)]
    for _ in range(12):
        h, w = rng.integers(size // 16, size // 3, size=2)
        top = rng.integers(0, size - h)
        left = rng.integers(0, size - w)
        img[top:top + h, left:left + w] = rng.uniform(0.05, 0.95)
    return np.clip(img, 0.02, 0.98)
