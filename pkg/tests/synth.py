"""Procedural test images with strong internal patch recurrence: piecewise
constant regions with sharp edges at many orientations and sizes, plus light
shading so the content is not degenerate."""

import numpy as np


def make_textured_image(seed: int, size: int = 256, channels: int = 1) -> np.ndarray:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    # Voronoi cells: sharp boundaries in many orientations.
    n_sites = max(12, size // 8)
    sites = rng.uniform(0, size, size=(n_sites, 2))
    levels = rng.uniform(0.1, 0.9, size=n_sites)
    d2 = (yy[..., None] - sites[:, 0]) ** 2 + (xx[..., None] - sites[:, 1]) ** 2
    img = levels[np.argmin(d2, axis=-1)]

    # Rectangles at assorted scales on top.
    for _ in range(10 + size // 32):
        h = int(rng.integers(size // 16, size // 3))
        w = int(rng.integers(size // 16, size // 3))
        top = int(rng.integers(0, size - h))
        left = int(rng.integers(0, size - w))
        img[top:top + h, left:left + w] = rng.uniform(0.05, 0.95)

    # Mild smooth shading keeps flat regions from being exactly constant.
    gy, gx = rng.uniform(-0.1, 0.1, size=2)
    img = img + gy * (yy / size) + gx * (xx / size)
    img = np.clip(img, 0.02, 0.98)
    if channels == 3:
        tint = rng.uniform(0.9, 1.1, size=3)
        img = np.clip(img[..., None] * tint, 0.0, 1.0)
    return img
