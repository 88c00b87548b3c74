"""Evaluation metrics: kernel PSNR, covariance distance, Y-channel image
PSNR/SSIM with border shaving, and paired-gain correlation analysis."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy import ndimage, stats

from .errors import InsufficientDataError, SizingError
from .kernels import CovarianceSummary, Kernel, discretized_covariance, shift_kernel_to_center

PSNR_SENTINEL_DB = 99.0


@dataclass
class EvalRecord:
    """One evaluated image: kernel and (optional) image fidelity numbers."""

    image_id: str
    scale: int
    variant: str
    kernel_psnr: float = float("nan")
    l_kcov: float = float("nan")
    image_psnr: float = float("nan")
    image_ssim: float = float("nan")
    l_t: float = float("nan")
    steps: int = 0
    wall_time_s: float = float("nan")
    run: int = 0

    @classmethod
    def csv_header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def csv_row(self) -> list:
        return [getattr(self, f.name) for f in fields(self)]


def kernel_psnr(gt: Kernel, est: Kernel, align: bool = True) -> float:
    """PSNR between two kernels with peak value 1; equal kernels report the
    99 dB sentinel. Kernels are center-aligned first so a pure translation
    does not dominate the comparison (align=False disables this)."""
    if gt.size != est.size:
        raise SizingError(f"kernel sizes differ: {gt.size} vs {est.size}")
    a, b = (shift_kernel_to_center(gt), shift_kernel_to_center(est)) if align else (gt, est)
    mse = float(np.mean((a.values - b.values) ** 2))
    if mse <= 0:
        return PSNR_SENTINEL_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_SENTINEL_DB)


def covariance_distance(cov_a: CovarianceSummary, cov_b: CovarianceSummary) -> float:
    """Entrywise L1 distance between two 2x2 covariance matrices (the
    off-diagonal term counts twice, once per matrix entry)."""
    return float(np.abs(cov_a.as_matrix() - cov_b.as_matrix()).sum())


def l_kcov(gt: Kernel, est: Kernel) -> float:
    """Covariance distance between the discretized covariances of two kernels."""
    return covariance_distance(discretized_covariance(gt), discretized_covariance(est))


def _to_y_255(img: np.ndarray) -> np.ndarray:
    """Map a [0,1] image to the BT.601 luma channel on the [0,255] range;
    grayscale inputs are treated as already-luma and scaled by 255."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img * 255.0
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ np.array([65.481, 128.553, 24.966]) + 16.0
    raise ValueError(f"expected (H,W) or (H,W,3) image, got {img.shape}")


def _ssim_map(y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
    """SSIM with the standard 11x11 Gaussian window (sigma 1.5) and constants,
    on the [0,255] range, valid-region only."""
    half = 5
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(coords ** 2) / (2 * 1.5 ** 2))
    window = np.outer(g, g)
    window /= window.sum()

    def filt(x):
        return ndimage.convolve(x, window, mode="constant")[half:-half, half:-half]

    c1 = (0.01 * 255) ** 2
    c2 = (0.03 * 255) ** 2
    mu1, mu2 = filt(y1), filt(y2)
    mu1_sq, mu2_sq, mu12 = mu1 ** 2, mu2 ** 2, mu1 * mu2
    sigma1_sq = filt(y1 * y1) - mu1_sq
    sigma2_sq = filt(y2 * y2) - mu2_sq
    sigma12 = filt(y1 * y2) - mu12
    return ((2 * mu12 + c1) * (2 * sigma12 + c2)
            / ((mu1_sq + mu2_sq + c1) * (sigma1_sq + sigma2_sq + c2)))


def image_psnr_ssim_y(sr_image: np.ndarray, hr_image: np.ndarray, scale: int
                      ) -> tuple[float, float]:
    """Y-channel PSNR (peak 255) and mean SSIM after shaving a border of
    `scale` pixels on every side."""
    sr = np.asarray(sr_image, dtype=np.float64)
    hr = np.asarray(hr_image, dtype=np.float64)
    if sr.shape != hr.shape:
        raise SizingError(f"image shapes differ: {sr.shape} vs {hr.shape}")
    y_sr = _to_y_255(sr)[scale:-scale, scale:-scale]
    y_hr = _to_y_255(hr)[scale:-scale, scale:-scale]
    mse = float(np.mean((y_sr - y_hr) ** 2))
    psnr = PSNR_SENTINEL_DB if mse <= 0 else min(
        10.0 * np.log10(255.0 ** 2 / mse), PSNR_SENTINEL_DB)
    ssim = float(_ssim_map(y_sr, y_hr).mean())
    return psnr, ssim


def correlate_gains(records_a, records_b, kernel_metric: str = "kernel_psnr",
                    image_metric: str = "image_psnr") -> tuple[float, float]:
    """Pearson-r and Spearman-rho between per-image gains (method A minus
    method B) in a kernel metric and in an image metric.

    records_a/records_b: sequences of EvalRecord (or any objects with the
    metric attributes) paired by position over the same image set.
    """
    if len(records_a) != len(records_b):
        raise ValueError("record lists must pair over the same image set")
    if len(records_a) < 3:
        raise InsufficientDataError("need at least 3 paired records to correlate")
    kernel_gain = np.array([getattr(a, kernel_metric) - getattr(b, kernel_metric)
                            for a, b in zip(records_a, records_b)])
    image_gain = np.array([getattr(a, image_metric) - getattr(b, image_metric)
                           for a, b in zip(records_a, records_b)])
    pearson = float(stats.pearsonr(kernel_gain, image_gain).statistic)
    spearman = float(stats.spearmanr(kernel_gain, image_gain).statistic)
    return pearson, spearman
