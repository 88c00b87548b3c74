"""Blur-kernel synthesis, transforms, and covariance summaries.

Kernels are square, odd-sided 2-D grids of non-negative mass summing to one
(estimated kernels relax both constraints until post-processed). The default
operating sizes are 11x11 for scale 2 and 21x21 for scale 4.
"""

from __future__ import annotations

import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, signal

from .errors import SizingError, ZeroMassKernelError

SUM_TOL = 1e-6
SUM_TOL_ESTIMATED = 1e-3
KERNEL_SIZES = {2: 11, 4: 21}

PROVENANCES = ("sampled", "perturbed", "derived_x4", "estimated")


@dataclass
class Kernel:
    """A 2-D blur kernel with its scale tag and provenance.

    values: m x m float grid (unitless mass), m odd.
    scale: the super-resolution scale the kernel belongs to (2 or 4).
    provenance: one of "sampled", "perturbed", "derived_x4", "estimated".
    """

    values: np.ndarray
    scale: int = 2
    provenance: str = "sampled"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise SizingError(f"kernel grid must be square, got {self.values.shape}")
        if self.values.shape[0] % 2 == 0:
            raise SizingError(f"kernel side must be odd, got {self.values.shape[0]}")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {self.scale}")
        if self.provenance != "estimated":
            if np.any(self.values < 0):
                raise ValueError(f"{self.provenance} kernel has negative entries")
            s = float(self.values.sum())
            if abs(s - 1.0) > SUM_TOL:
                raise ValueError(f"{self.provenance} kernel sums to {s}, not 1")

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def center_of_mass(self) -> tuple[float, float]:
        """(row, col) first moment of the mass distribution."""
        total = float(np.abs(self.values).sum())
        if total <= 0:
            raise ZeroMassKernelError("center of mass undefined for zero-mass kernel")
        r, c = ndimage.center_of_mass(np.abs(self.values))
        return float(r), float(c)


@dataclass
class GaussianSpec:
    """Anisotropic Gaussian parameters: rotation angle and covariance eigenvalues.

    theta is in radians in [0, pi]; lambda1/lambda2 are covariance eigenvalues
    in LR-pixel^2, drawn from U[0.35, 5.0] by the default distribution.
    """

    theta: float
    lambda1: float
    lambda2: float

    def __post_init__(self):
        # Sampling draws theta from [0, pi]; up to 2*pi is accepted because the
        # density is invariant under a half turn.
        if not 0.0 <= self.theta <= 2.0 * np.pi:
            raise ValueError(f"theta must lie in [0, 2*pi], got {self.theta}")
        for lam in (self.lambda1, self.lambda2):
            if not 0.35 <= lam <= 5.0:
                raise ValueError(f"eigenvalues must lie in [0.35, 5.0], got {lam}")

    def covariance(self) -> np.ndarray:
        """2x2 covariance matrix R(theta) diag(l1, l2) R(theta)^T.

        theta is reduced modulo pi first: the density is half-turn symmetric
        and the reduction keeps that symmetry exact up to the rounding of the
        caller's own theta arithmetic.
        """
        t = self.theta % np.pi
        c, s = np.cos(t), np.sin(t)
        rot = np.array([[c, -s], [s, c]])
        return rot @ np.diag([self.lambda1, self.lambda2]) @ rot.T


@dataclass
class CovarianceSummary:
    """Discretized 2x2 covariance of a kernel treated as a probability mass.

    a: variance along the column (x) axis; b: variance along the row (y) axis;
    c: cross-covariance. Estimated kernels may yield a summary that is not
    positive semi-definite; only a >= 0 and b >= 0 are guaranteed.
    """

    a: float
    b: float
    c: float

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.a, self.c], [self.c, self.b]])


@dataclass
class KernelDistribution:
    """Sampler for GaussianSpec over U[0, pi] angles and uniform eigenvalues."""

    lambda_range: tuple[float, float] = (0.35, 5.0)
    theta_range: tuple[float, float] = field(default=(0.0, np.pi))

    def sample(self, rng: np.random.Generator) -> GaussianSpec:
        lo, hi = self.lambda_range
        return GaussianSpec(
            theta=float(rng.uniform(*self.theta_range)),
            lambda1=float(rng.uniform(lo, hi)),
            lambda2=float(rng.uniform(lo, hi)),
        )


def as_rng(seed) -> np.random.Generator:
    """Accept an int seed, a Generator, or None (fresh entropy)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_gaussian_kernel(spec: GaussianSpec, size: int = 11, scale: int = 2) -> Kernel:
    """Evaluate the anisotropic Gaussian pmf on an integer grid and normalize.

    The density is evaluated at integer offsets from the grid center (no cell
    integration) and normalized to sum 1. Deterministic given the spec.
    """
    if size % 2 == 0 or size < 1:
        raise SizingError(f"kernel size must be odd and positive, got {size}")
    half = size // 2
    coords = np.arange(size) - half
    xx, yy = np.meshgrid(coords, coords)  # xx: column offset, yy: row offset
    pts = np.stack([xx, yy], axis=-1).astype(np.float64)
    prec = np.linalg.inv(spec.covariance())
    quad = np.einsum("...i,ij,...j->...", pts, prec, pts)
    values = np.exp(-0.5 * quad)
    values /= values.sum()
    return Kernel(values, scale=scale, provenance="sampled")


def perturb_kernel_multiplicative(k: Kernel, max_frac: float, rng_seed=None) -> Kernel:
    """Add per-pixel uniform noise of up to max_frac * max(k), clamp at 0, renormalize."""
    if not 0.0 <= max_frac <= 1.0:
        raise ValueError(f"max_frac must lie in [0, 1], got {max_frac}")
    rng = as_rng(rng_seed)
    amplitude = max_frac * float(k.values.max())
    noise = rng.uniform(-amplitude, amplitude, size=k.values.shape)
    values = np.maximum(k.values + noise, 0.0)
    total = values.sum()
    if total <= 0:
        raise ZeroMassKernelError("perturbation removed all kernel mass")
    return Kernel(values / total, scale=k.scale, provenance="perturbed")


def dilate2(values: np.ndarray) -> np.ndarray:
    """Insert a zero between adjacent entries, scaling coordinates by 2."""
    m = values.shape[0]
    out = np.zeros((2 * m - 1, 2 * m - 1), dtype=values.dtype)
    out[::2, ::2] = values
    return out


def _center_crop_or_pad(values: np.ndarray, size: int) -> np.ndarray:
    m = values.shape[0]
    if m == size:
        return values
    if m > size:
        off = (m - size) // 2
        return values[off:off + size, off:off + size]
    pad = (size - m) // 2
    return np.pad(values, pad)


def derive_x4_kernel(k2: Kernel) -> Kernel:
    """Analytic x4 kernel from an 11x11 x2 kernel: k2 convolved with its 2x dilation.

    Chaining two x2 degradations (the second acting on the subsampled grid)
    composes to a x4 degradation whose kernel is k2 * dilate2(k2); the result
    is center-cropped to 21x21 and renormalized.
    """
    if k2.size != KERNEL_SIZES[2] or k2.scale != 2:
        raise SizingError(
            f"expected an 11x11 x2 kernel, got {k2.size}x{k2.size} at scale {k2.scale}"
        )
    full = signal.convolve2d(k2.values, dilate2(k2.values), mode="full")
    values = _center_crop_or_pad(full, KERNEL_SIZES[4])
    values = np.maximum(values, 0.0)
    return Kernel(values / values.sum(), scale=4, provenance="derived_x4")


def shift_kernel_to_center(k: Kernel, tol: float = 1e-3, max_iter: int = 10) -> Kernel:
    """Translate the kernel mass so its center of mass sits at the grid center.

    Fractional translations use bilinear interpolation of mass; mass pushed off
    the grid is dropped, so border-heavy kernels converge over a few iterations.
    """
    values = np.array(k.values, dtype=np.float64)
    if np.abs(values).sum() <= 0:
        raise ZeroMassKernelError("cannot center a zero-mass kernel")
    center = (k.size - 1) / 2.0
    for _ in range(max_iter):
        r, c = ndimage.center_of_mass(np.abs(values))
        dr, dc = center - r, center - c
        if abs(dr) < tol and abs(dc) < tol:
            break
        values = ndimage.shift(values, (dr, dc), order=1, mode="constant", cval=0.0)
        total = np.abs(values).sum()
        if total <= 0:
            raise ZeroMassKernelError("centering shifted all mass off the grid")
    values = values / values.sum()
    return Kernel(values, scale=k.scale, provenance=k.provenance)


def discretized_covariance(k: Kernel) -> CovarianceSummary:
    """Mass-weighted second moments of |k| over integer (col, row) coordinates."""
    mass = np.abs(k.values)
    total = mass.sum()
    if total <= 0:
        raise ZeroMassKernelError("covariance undefined for zero-mass kernel")
    p = mass / total
    m = k.size
    coords = np.arange(m, dtype=np.float64)
    xx, yy = np.meshgrid(coords, coords)  # xx: column index, yy: row index
    mx = float((p * xx).sum())
    my = float((p * yy).sum())
    a = float((p * (xx - mx) ** 2).sum())
    b = float((p * (yy - my) ** 2).sum())
    c = float((p * (xx - mx) * (yy - my)).sum())
    return CovarianceSummary(a=a, b=b, c=c)


def delta_kernel(size: int, scale: int = 2) -> Kernel:
    """Unit mass at the grid center."""
    if size % 2 == 0:
        raise SizingError(f"kernel size must be odd, got {size}")
    values = np.zeros((size, size))
    values[size // 2, size // 2] = 1.0
    return Kernel(values, scale=scale, provenance="sampled")


# ---------------------------------------------------------------------------
# Kernel file format: one kernel per .kernel file (a self-describing npz
# archive holding the float64 grid plus size/scale/provenance header fields).
# Filename convention: <image-stem>_x<scale>.kernel
# ---------------------------------------------------------------------------

def save_kernel(k: Kernel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            values=k.values.astype(np.float64),
            size=np.int64(k.size),
            scale=np.int64(k.scale),
            provenance=np.str_(k.provenance),
        )
    return path


def load_kernel(path) -> Kernel:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            values = data["values"]
            scale = int(data["scale"])
            provenance = str(data["provenance"])
            size = int(data["size"])
    except (zipfile.BadZipFile, KeyError, OSError, ValueError) as exc:
        raise ValueError(f"unreadable kernel file {path}: {exc}") from exc
    if values.shape != (size, size):
        raise SizingError(f"kernel file {path} header size {size} != grid {values.shape}")
    return Kernel(values, scale=scale, provenance=provenance)


def kernel_filename(image_stem: str, scale: int) -> str:
    return f"{image_stem}_x{scale}.kernel"
