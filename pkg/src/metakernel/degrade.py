"""Degradation simulation and task construction.

The degradation model: lr = subsample_s(hr convolved with k) + noise, with
reflective boundary handling and top-left (index 0) subsampling phase. Tasks
pair an LR image with the kernel that produced it; patch sampling weights
follow local gradient magnitude.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import SizingError
from .images import luminance
from .kernels import Kernel, KernelDistribution, as_rng, derive_x4_kernel, sample_gaussian_kernel

log = logging.getLogger(__name__)


@dataclass
class Task:
    """One adaptation episode: an LR image and the kernel that produced it."""

    lr_image: np.ndarray
    gt_kernel: Kernel
    scale: int
    hr_source_id: str = ""
    augmentation: dict = field(default_factory=dict)
    noise_level: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.noise_level < 1.0:
            raise ValueError(f"noise_level must lie in [0, 1), got {self.noise_level}")


@dataclass
class PatchProbabilityMap:
    """Selection probabilities over top-left patch anchors (stride 1)."""

    probs: np.ndarray  # shape (n_anchor_rows, n_anchor_cols), sums to 1
    patch_size: int

    def __post_init__(self):
        if np.any(self.probs < 0):
            raise ValueError("patch probabilities must be non-negative")
        total = float(self.probs.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"patch probabilities sum to {total}, not 1")
        self._cdf = None

    def sample_anchor(self, rng: np.random.Generator) -> tuple[int, int]:
        """Draw an anchor; the cumulative distribution is cached so draws stay
        O(log n) on megapixel images."""
        if self._cdf is None:
            self._cdf = np.cumsum(self.probs.ravel())
            self._cdf[-1] = 1.0
        flat_idx = int(np.searchsorted(self._cdf, rng.random(), side="right"))
        flat_idx = min(flat_idx, self.probs.size - 1)
        return np.unravel_index(flat_idx, self.probs.shape)


def degrade_image(hr: np.ndarray, k: Kernel, scale: int, noise_level: float = 0.0,
                  rng_seed=None) -> np.ndarray:
    """Blur with k (reflective boundaries), subsample every `scale`-th pixel
    starting at index 0, then add clipped white Gaussian noise of std
    noise_level (fraction of the [0,1] pixel range). Zero-noise output is
    returned unclipped so the operator stays exactly linear.
    """
    hr = np.asarray(hr, dtype=np.float64)
    if hr.shape[0] % scale or hr.shape[1] % scale:
        raise SizingError(
            f"hr dims {hr.shape[:2]} not divisible by scale {scale}; crop first"
        )
    if hr.ndim == 2:
        blurred = ndimage.convolve(hr, k.values, mode="reflect")
    else:
        blurred = np.stack(
            [ndimage.convolve(hr[..., ch], k.values, mode="reflect")
             for ch in range(hr.shape[2])], axis=-1)
    lr = blurred[::scale, ::scale]
    if noise_level > 0.0:
        rng = as_rng(rng_seed)
        lr = lr + rng.normal(0.0, noise_level, size=lr.shape)
        lr = np.clip(lr, 0.0, 1.0)
    return lr


def pad_to_minimum(image: np.ndarray, min_size: int) -> np.ndarray:
    """Reflection-pad symmetrically until both spatial dims are >= min_size."""
    h, w = image.shape[:2]
    if h >= min_size and w >= min_size:
        return image
    pad_h = max(min_size - h, 0)
    pad_w = max(min_size - w, 0)
    top, left = pad_h // 2, pad_w // 2
    pads = [(top, pad_h - top), (left, pad_w - left)] + [(0, 0)] * (image.ndim - 2)
    return np.pad(image, pads, mode="reflect")


def augment(image: np.ndarray, rot90: int = 0, hflip: bool = False,
            vflip: bool = False) -> np.ndarray:
    out = np.rot90(image, rot90) if rot90 else image
    if hflip:
        out = out[:, ::-1]
    if vflip:
        out = out[::-1, :]
    return np.ascontiguousarray(out)


def sample_task(dataset, kernel_dist: KernelDistribution, scale: int = 2,
                crop: int = 192, rng_seed=None) -> Task:
    """Draw one training task: uniform image choice, uniform crop, dihedral
    augmentation, a fresh kernel from the distribution, and a clean (zero
    noise) degradation.

    `dataset` is a sequence of HR arrays or of (id, array) pairs. Images
    smaller than the crop are reflection-padded up to it, with a warning.
    """
    if len(dataset) == 0:
        raise ValueError("cannot sample a task from an empty dataset")
    rng = as_rng(rng_seed)
    idx = int(rng.integers(len(dataset)))
    entry = dataset[idx]
    if isinstance(entry, tuple):
        source_id, hr = entry
    else:
        source_id, hr = str(idx), entry
    hr = np.asarray(hr, dtype=np.float64)

    if hr.shape[0] < crop or hr.shape[1] < crop:
        log.warning("image %s smaller than crop %d; padding and resampling anchor",
                    source_id, crop)
        hr = pad_to_minimum(hr, crop)
    top = int(rng.integers(hr.shape[0] - crop + 1))
    left = int(rng.integers(hr.shape[1] - crop + 1))
    patch = hr[top:top + crop, left:left + crop]

    aug = {
        "rot90": int(rng.integers(2)),
        "hflip": bool(rng.integers(2)),
        "vflip": bool(rng.integers(2)),
    }
    patch = augment(patch, **aug)

    spec = kernel_dist.sample(rng)
    k2 = sample_gaussian_kernel(spec, size=11, scale=2)
    kernel = k2 if scale == 2 else derive_x4_kernel(k2)
    lr = degrade_image(patch, kernel, scale, noise_level=0.0)
    return Task(lr_image=lr, gt_kernel=kernel, scale=scale, hr_source_id=source_id,
                augmentation=aug, noise_level=0.0)


def gradient_magnitude(image: np.ndarray) -> np.ndarray:
    """Central-difference gradient magnitude, channels averaged."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=2)
    gy, gx = np.gradient(img)
    return np.hypot(gx, gy)


def patch_selection_probabilities(image: np.ndarray, patch_size: int) -> PatchProbabilityMap:
    """Weight each stride-1 patch anchor by the gradient magnitude inside the
    patch; a constant image falls back to the uniform distribution."""
    h, w = image.shape[:2]
    if h < patch_size or w < patch_size:
        raise SizingError(f"image {h}x{w} smaller than patch size {patch_size}")
    grad = gradient_magnitude(image)
    # Summed-area table gives every patch-window sum in O(HW).
    sat = np.zeros((h + 1, w + 1))
    np.cumsum(np.cumsum(grad, axis=0), axis=1, out=sat[1:, 1:])
    p = patch_size
    weights = (sat[p:, p:] - sat[:-p, p:] - sat[p:, :-p] + sat[:-p, :-p])
    weights = np.maximum(weights, 0.0)
    total = weights.sum()
    if total <= 0:
        weights = np.full_like(weights, 1.0 / weights.size)
    else:
        weights = weights / total
    weights /= weights.sum()
    return PatchProbabilityMap(probs=weights, patch_size=patch_size)


def sample_patch_anchor(probs: PatchProbabilityMap, rng: np.random.Generator) -> tuple[int, int]:
    return probs.sample_anchor(rng)


def sample_patch_pair_from_image(image: np.ndarray, probs: PatchProbabilityMap,
                                 d_patch: int, scale: int, rng_seed=None
                                 ) -> tuple[np.ndarray, np.ndarray]:
    """Sample a generator input patch of side d_patch*scale from an image by
    gradient-magnitude probability; the discriminator's real patch is the
    top-left d_patch sub-patch of the same region."""
    rng = as_rng(rng_seed)
    g_size = d_patch * scale
    if probs.patch_size != g_size:
        raise ValueError(
            f"probability map patch size {probs.patch_size} != d_patch*scale {g_size}"
        )
    h, w = image.shape[:2]
    if h < g_size or w < g_size:
        raise SizingError(f"lr image {h}x{w} too small for {g_size} patches; pad first")
    top, left = sample_patch_anchor(probs, rng)
    g_patch = image[top:top + g_size, left:left + g_size]
    d_patch_arr = g_patch[:d_patch, :d_patch]
    return g_patch, d_patch_arr


def sample_patch_pair(task: Task, probs: PatchProbabilityMap, d_patch: int = 32,
                      rng_seed=None) -> tuple[np.ndarray, np.ndarray]:
    return sample_patch_pair_from_image(task.lr_image, probs, d_patch, task.scale,
                                        rng_seed)


def task_luminance(task: Task) -> np.ndarray:
    return luminance(task.lr_image)
