import numpy as np
import pytest

from metakernel.errors import InsufficientDataError, SizingError
from metakernel.kernels import GaussianSpec, Kernel, delta_kernel, sample_gaussian_kernel
from metakernel.metrics import (PSNR_SENTINEL_DB, EvalRecord, correlate_gains,
                                image_psnr_ssim_y, kernel_psnr, l_kcov)
from oracles import pearson_textbook, spearman_textbook
from synth import make_textured_image


class TestKernelPSNR:
    def test_identical_returns_sentinel(self):
        k = sample_gaussian_kernel(GaussianSpec(0.4, 1.0, 2.0), 11)
        assert kernel_psnr(k, k) == PSNR_SENTINEL_DB == 99.0

    def test_formula_mse_1e4_is_40db(self):
        gt = Kernel(np.full((11, 11), 1 / 121), provenance="estimated")
        est = Kernel(gt.values + 0.01, provenance="estimated")
        assert kernel_psnr(gt, est, align=False) == pytest.approx(40.0, abs=1e-9)

    def test_matches_direct_mse_oracle(self):
        a = sample_gaussian_kernel(GaussianSpec(0.0, 1.0, 1.0), 11)
        b = sample_gaussian_kernel(GaussianSpec(0.0, 2.0, 2.0), 11)
        mse = float(np.mean((a.values - b.values) ** 2))
        expected = 10 * np.log10(1.0 / mse)
        assert kernel_psnr(a, b) == pytest.approx(expected, abs=1e-6)

    def test_symmetric(self):
        a = sample_gaussian_kernel(GaussianSpec(0.3, 1.0, 0.5), 11)
        b = sample_gaussian_kernel(GaussianSpec(1.3, 2.4, 1.1), 11)
        assert kernel_psnr(a, b) == pytest.approx(kernel_psnr(b, a), abs=1e-9)

    def test_alignment_absorbs_translation(self):
        base = sample_gaussian_kernel(GaussianSpec(0.0, 0.5, 0.5), 11)
        shifted = np.roll(base.values, 1, axis=1)
        est = Kernel(shifted, provenance="estimated")
        aligned = kernel_psnr(base, est, align=True)
        raw = kernel_psnr(base, est, align=False)
        assert aligned > raw + 10.0

    def test_size_mismatch(self):
        with pytest.raises(SizingError):
            kernel_psnr(delta_kernel(11), delta_kernel(21, scale=4))


class TestCovarianceDistance:
    def test_identity_zero(self):
        k = sample_gaussian_kernel(GaussianSpec(0.9, 2.0, 1.0), 11)
        assert l_kcov(k, k) == 0.0

    def test_isotropic_1_vs_4_wide_grid(self):
        a = sample_gaussian_kernel(GaussianSpec(0.0, 1.0, 1.0), 41)
        b = sample_gaussian_kernel(GaussianSpec(0.7, 4.0, 4.0), 41)
        assert l_kcov(a, b) == pytest.approx(6.0, abs=0.3)

    def test_symmetric_and_nonnegative(self):
        a = sample_gaussian_kernel(GaussianSpec(0.2, 1.5, 0.5), 11)
        b = sample_gaussian_kernel(GaussianSpec(1.2, 3.0, 2.0), 11)
        assert l_kcov(a, b) == pytest.approx(l_kcov(b, a))
        assert l_kcov(a, b) >= 0.0

    def test_triangle_inequality(self):
        ks = [sample_gaussian_kernel(GaussianSpec(t, l1, l2), 21)
              for t, l1, l2 in ((0.1, 0.8, 2.0), (0.9, 3.0, 1.0), (2.0, 1.5, 1.5))]
        a, b, c = ks
        assert l_kcov(a, c) <= l_kcov(a, b) + l_kcov(b, c) + 1e-12

    def test_off_diagonal_counted_twice(self):
        from metakernel.kernels import CovarianceSummary
        from metakernel.metrics import covariance_distance

        x = CovarianceSummary(a=1.0, b=1.0, c=0.5)
        y = CovarianceSummary(a=1.0, b=1.0, c=0.0)
        assert covariance_distance(x, y) == pytest.approx(1.0)


class TestImagePSNRSSIM:
    def test_identical_images(self):
        img = make_textured_image(1, 64)
        psnr, ssim = image_psnr_ssim_y(img, img, scale=2)
        assert psnr == PSNR_SENTINEL_DB
        assert ssim == pytest.approx(1.0)

    def test_uniform_offset_closed_form(self):
        # Grayscale: Y = img*255, so a 1/255 offset is exactly MSE 1 on the
        # 255 scale and PSNR = 20*log10(255) = 48.1308 dB.
        img = make_textured_image(2, 64) * 0.9
        offset = img + 1.0 / 255.0
        psnr, _ = image_psnr_ssim_y(offset, img, scale=2)
        assert psnr == pytest.approx(20 * np.log10(255.0), abs=1e-6)
        assert psnr == pytest.approx(48.13, abs=0.01)

    def test_ssim_symmetric(self):
        a = make_textured_image(3, 64)
        b = make_textured_image(4, 64)
        p_ab, s_ab = image_psnr_ssim_y(a, b, scale=2)
        p_ba, s_ba = image_psnr_ssim_y(b, a, scale=2)
        assert p_ab == pytest.approx(p_ba)
        assert s_ab == pytest.approx(s_ba)

    def test_border_shaving_exact_insensitivity(self):
        hr = make_textured_image(5, 64)
        sr = hr.copy()
        corrupted = sr.copy()
        scale = 2
        corrupted[:scale, :] = 0.0
        corrupted[-scale:, :] = 1.0
        corrupted[:, :scale] = 0.5
        corrupted[:, -scale:] = 0.25
        base = image_psnr_ssim_y(sr, hr, scale)
        after = image_psnr_ssim_y(corrupted, hr, scale)
        assert base == after

    def test_rgb_uses_bt601_luma(self):
        rgb = make_textured_image(6, 64, channels=3)
        gray_y = (rgb @ np.array([65.481, 128.553, 24.966]) + 16.0) / 255.0
        p1, s1 = image_psnr_ssim_y(rgb * 0.98, rgb, scale=2)
        p2, s2 = image_psnr_ssim_y(gray_y * 0.98 + 16.0 / 255.0 * 0.02, gray_y, scale=2)
        assert p1 == pytest.approx(p2, abs=1e-6)

    def test_dim_mismatch(self):
        with pytest.raises(SizingError):
            image_psnr_ssim_y(np.zeros((10, 10)), np.zeros((12, 12)), 2)

    def test_ssim_drops_with_structure_change(self):
        img = make_textured_image(7, 64)
        noisy = np.clip(img + np.random.default_rng(0).normal(0, 0.1, img.shape), 0, 1)
        _, ssim = image_psnr_ssim_y(noisy, img, scale=2)
        assert ssim < 0.95


def _records(values, metric="kernel_psnr"):
    recs = []
    for i, v in enumerate(values):
        r = EvalRecord(image_id=f"i{i}", scale=2, variant="gaussian")
        setattr(r, metric, float(v))
        recs.append(r)
    return recs


class TestCorrelateGains:
    def test_perfectly_linear(self):
        ka = _records([1, 2, 3, 4, 5])
        kb = _records([0, 0, 0, 0, 0])
        for a, b, v in zip(ka, kb, [2, 4, 6, 8, 10]):
            a.image_psnr = float(v)
            b.image_psnr = 0.0
        r, rho = correlate_gains(ka, kb)
        assert r == pytest.approx(1.0)
        assert rho == pytest.approx(1.0)

    def test_anti_monotone(self):
        ka = _records([1, 2, 3, 4])
        kb = _records([0, 0, 0, 0])
        for a, v in zip(ka, [10.0, 3.0, 2.0, -4.0]):
            a.image_psnr = v
        for b in kb:
            b.image_psnr = 0.0
        _, rho = correlate_gains(ka, kb)
        assert rho == pytest.approx(-1.0)

    def test_matches_textbook_oracle(self):
        rng = np.random.default_rng(8)
        kg = rng.normal(size=12)
        ig = 0.3 * kg + rng.normal(size=12)
        ka = _records(kg)
        kb = _records(np.zeros(12))
        for a, b, v in zip(ka, kb, ig):
            a.image_psnr = float(v)
            b.image_psnr = 0.0
        r, rho = correlate_gains(ka, kb)
        assert r == pytest.approx(pearson_textbook(kg, ig), abs=1e-10)
        assert rho == pytest.approx(spearman_textbook(kg, ig), abs=1e-10)

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            correlate_gains(_records([1, 2]), _records([0, 0]))

    def test_unpaired_lists(self):
        with pytest.raises(ValueError):
            correlate_gains(_records([1, 2, 3]), _records([0, 0]))
