"""Operational shell: benchmark generation, the external SR adapter hook,
batch evaluation with CSV reporting, and kernel montage plotting."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402 (backend pinned first)

from .adapt import AdaptConfig, estimate_kernel, fallback_indicator, load_trace, postprocess_kernel
from .degrade import degrade_image
from .errors import AdapterError
from .images import list_dataset, load_image, save_image
from .kernels import (Kernel, KernelDistribution, derive_x4_kernel, kernel_filename,
                      load_kernel, perturb_kernel_multiplicative, sample_gaussian_kernel,
                      save_kernel, shift_kernel_to_center)
from .metrics import EvalRecord, image_psnr_ssim_y, kernel_psnr, l_kcov
from .nets import derive_kernel, load_models

log = logging.getLogger(__name__)

CACHE_DIR_ENV = "METAKERNEL_CACHE_DIR"
VARIANTS = ("gaussian", "non_gaussian", "noisy")


@dataclass
class BenchmarkSpec:
    """Recipe for a degraded benchmark: one fresh kernel per source image."""

    source: str
    scale: int = 2
    variant: str = "gaussian"
    kernel_noise_frac: float = 0.4     # multiplicative kernel noise (non_gaussian)
    image_noise_level: float = 0.0392  # additive image noise std (noisy)
    master_seed: int = 0
    lambda_range: tuple = (0.35, 5.0)

    def __post_init__(self):
        if self.scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {self.scale}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant}")

    def hash(self) -> str:
        payload = dataclasses.asdict(self)
        payload["source"] = str(Path(self.source).name)
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class SRAdapterSpec:
    """How to turn (LR image, kernel) into an HR estimate.

    builtin_bicubic ignores the kernel (documented weak baseline).
    external_process runs `command` (shell string; "{exchange_dir}" expands to
    a temp directory holding input.png / kernel.kernel / scale.txt) and reads
    back output.png from the same directory.
    """

    mode: str = "builtin_bicubic"
    command: str = ""
    working_dir: str | None = None
    timeout: float = 300.0

    def __post_init__(self):
        if self.mode not in ("builtin_bicubic", "external_process"):
            raise ValueError(f"unknown adapter mode {self.mode}")
        if self.mode == "external_process" and not self.command:
            raise ValueError("external_process adapter requires a command")


def gen_benchmark(spec: BenchmarkSpec, out_dir) -> dict:
    """Degrade every readable image under spec.source with its own randomly
    generated kernel; write LR PNGs, sidecar kernels, and a manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "spec": dataclasses.asdict(spec),
        "spec_hash": spec.hash(),
        "rows": [],
    }
    dist = KernelDistribution(lambda_range=tuple(spec.lambda_range))
    for index, path in enumerate(list_dataset(spec.source)):
        stem = path.stem
        try:
            hr = load_image(path)
            rng = np.random.default_rng(np.random.SeedSequence([spec.master_seed, index]))
            gspec = dist.sample(rng)
            kernel = sample_gaussian_kernel(gspec, size=11, scale=2)
            if spec.scale == 4:
                kernel = derive_x4_kernel(kernel)
            if spec.variant == "non_gaussian":
                kernel = perturb_kernel_multiplicative(kernel, spec.kernel_noise_frac, rng)
            kernel = shift_kernel_to_center(kernel)
            h, w = hr.shape[:2]
            hr_cropped = hr[:h - h % spec.scale, :w - w % spec.scale]
            noise = spec.image_noise_level if spec.variant == "noisy" else 0.0
            lr = degrade_image(hr_cropped, kernel, spec.scale, noise, rng)
        except Exception as exc:  # unusable images are skipped, annotated
            log.warning("skipping unusable image %s: %s", path, exc)
            manifest["rows"].append({"image_id": stem, "error": str(exc)})
            continue
        lr_name = f"{stem}_x{spec.scale}.png"
        kernel_name = kernel_filename(stem, spec.scale)
        save_image(lr, out_dir / lr_name)
        save_kernel(kernel, out_dir / kernel_name)
        manifest["rows"].append({
            "image_id": stem,
            "hr_path": str(path.resolve()),
            "lr_file": lr_name,
            "kernel_file": kernel_name,
            "scale": spec.scale,
            "variant": spec.variant,
            "seed": [spec.master_seed, index],
            "gaussian_spec": {"theta": gspec.theta, "lambda1": gspec.lambda1,
                              "lambda2": gspec.lambda2},
            "noise_level": noise,
        })
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def _bicubic_upsample(lr: np.ndarray, scale: int) -> np.ndarray:
    from PIL import Image

    def up(channel):
        im = Image.fromarray(channel.astype(np.float32), mode="F")
        h, w = channel.shape
        return np.asarray(im.resize((w * scale, h * scale), Image.BICUBIC),
                          dtype=np.float64)

    if lr.ndim == 2:
        out = up(lr)
    else:
        out = np.stack([up(lr[..., ch]) for ch in range(lr.shape[2])], axis=-1)
    return np.clip(out, 0.0, 1.0)


def run_sr(lr: np.ndarray, kernel: Kernel, scale: int, adapter: SRAdapterSpec
           ) -> np.ndarray:
    """Produce an HR estimate from an LR image and its kernel."""
    if adapter.mode == "builtin_bicubic":
        return _bicubic_upsample(lr, scale)

    cache_root = os.environ.get(CACHE_DIR_ENV)
    if cache_root:
        Path(cache_root).mkdir(parents=True, exist_ok=True)
    exchange = Path(tempfile.mkdtemp(prefix="metakernel_sr_", dir=cache_root))
    try:
        save_image(lr, exchange / "input.png")
        save_kernel(kernel, exchange / "kernel.kernel")
        (exchange / "scale.txt").write_text(f"{scale}\n")
        command = adapter.command.format(exchange_dir=str(exchange))
        try:
            proc = subprocess.run(
                command, shell=True, cwd=adapter.working_dir,
                capture_output=True, text=True, timeout=adapter.timeout)
        except subprocess.TimeoutExpired as exc:
            raise AdapterError(
                f"SR command timed out after {adapter.timeout}s: {command}") from exc
        output = exchange / "output.png"
        if proc.returncode != 0 or not output.exists():
            raise AdapterError(
                f"SR command failed (exit {proc.returncode}), output.png "
                f"{'missing' if not output.exists() else 'present'}.\n"
                f"stdout:\n{proc.stdout}\nstderr:\n{proc.stderr}")
        return load_image(output)
    finally:
        shutil.rmtree(exchange, ignore_errors=True)


def _write_csv(path: Path, records: list[EvalRecord]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EvalRecord.csv_header())
        for rec in records:
            writer.writerow(rec.csv_row())


def evaluate(benchmark_dir, ckpt, adapt_config: AdaptConfig | None, out_csv,
             adapter: SRAdapterSpec | None = None, runs: int = 1,
             eval_seed: int = 0, use_gt_kernel: bool = False) -> dict:
    """Estimate kernels for every manifest row, score them against the sidecar
    ground truth, optionally run SR for image metrics, and write a CSV.

    runs > 1 repeats the whole pass with per-run seeds; the summary reports
    the mean over all rows. use_gt_kernel injects the ground-truth kernel
    instead of estimating (the SR upper-bound configuration).
    """
    benchmark_dir = Path(benchmark_dir)
    with open(benchmark_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    adapt_config = adapt_config or AdaptConfig()

    gen = disc = None
    prior_kernels: dict[int, Kernel] = {}
    if not use_gt_kernel:
        gen, disc = load_models(ckpt)
        prior2 = postprocess_kernel(derive_kernel(gen))
        prior_kernels[2] = prior2
        prior_kernels[4] = derive_x4_kernel(prior2)

    records: list[EvalRecord] = []
    rows = [r for r in manifest["rows"] if "error" not in r]
    for run in range(runs):
        for row_idx, row in enumerate(rows):
            scale = int(row["scale"])
            try:
                lr = load_image(benchmark_dir / row["lr_file"])
                gt_kernel = load_kernel(benchmark_dir / row["kernel_file"])
                rec = EvalRecord(image_id=row["image_id"], scale=scale,
                                 variant=row["variant"], run=run)
                if use_gt_kernel:
                    est = gt_kernel
                    rec.steps = 0
                    rec.wall_time_s = 0.0
                else:
                    seed = np.random.SeedSequence([eval_seed, run, row_idx])
                    start = time.perf_counter()
                    est2, _ = estimate_kernel(lr, gen, disc, adapt_config,
                                              np.random.default_rng(seed))
                    rec.wall_time_s = time.perf_counter() - start
                    rec.steps = adapt_config.steps
                    est = est2 if scale == 2 else derive_x4_kernel(est2)
                    rec.l_t = fallback_indicator(est, prior_kernels[scale], gt_kernel)
                rec.kernel_psnr = kernel_psnr(gt_kernel, est)
                rec.l_kcov = l_kcov(gt_kernel, est)
                if adapter is not None:
                    sr = run_sr(lr, est, scale, adapter)
                    hr = load_image(row["hr_path"])
                    hr = hr[:sr.shape[0], :sr.shape[1]]
                    rec.image_psnr, rec.image_ssim = image_psnr_ssim_y(sr, hr, scale)
                records.append(rec)
            except Exception as exc:
                log.error("evaluation failed for %s (run %d): %s",
                          row["image_id"], run, exc)
                records.append(EvalRecord(image_id=row["image_id"], scale=scale,
                                          variant=row.get("variant", ""), run=run))

    _write_csv(Path(out_csv), records)
    if not records:
        raise ValueError("empty benchmark: no evaluable manifest rows")
    summary = summarize_records(records)
    return summary


def summarize_records(records: list[EvalRecord]) -> dict:
    def mean_of(name):
        vals = [getattr(r, name) for r in records if np.isfinite(getattr(r, name))]
        return float(np.mean(vals)) if vals else float("nan")

    summary = {
        "count": len(records),
        "image_psnr": mean_of("image_psnr"),
        "image_ssim": mean_of("image_ssim"),
        "kernel_psnr": mean_of("kernel_psnr"),
        "l_kcov": mean_of("l_kcov"),
        "l_t": mean_of("l_t"),
        "wall_time_s": mean_of("wall_time_s"),
    }
    summary["cell"] = "{:.4f}/{:.4f}/{:.4f}/{:.4f}".format(
        summary["image_psnr"], summary["image_ssim"],
        summary["kernel_psnr"], summary["l_kcov"])
    return summary


def read_records_csv(path) -> list[EvalRecord]:
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(EvalRecord(
                image_id=row["image_id"], scale=int(row["scale"]),
                variant=row["variant"], kernel_psnr=float(row["kernel_psnr"]),
                l_kcov=float(row["l_kcov"]), image_psnr=float(row["image_psnr"]),
                image_ssim=float(row["image_ssim"]), l_t=float(row["l_t"]),
                steps=int(row["steps"]), wall_time_s=float(row["wall_time_s"]),
                run=int(row["run"])))
    return records


def report_text(csv_path) -> str:
    records = read_records_csv(csv_path)
    if not records:
        return "no records"
    summary = summarize_records(records)
    lines = [
        f"records: {summary['count']}",
        f"image PSNR / image SSIM / kernel PSNR / covariance distance: {summary['cell']}",
        f"mean fallback indicator: {summary['l_t']:.4f}",
        f"mean kernel-estimation wall time: {summary['wall_time_s']:.2f} s",
    ]
    return "\n".join(lines)


def plot_kernels(inputs, out_image, labels=None) -> dict:
    """Render kernels as a one-row heatmap montage with a shared color scale.

    inputs: a list of .kernel file paths, or a single adaptation-trace .npz
    path. Returns montage metadata (cell count and output path).
    """
    kernels: list[Kernel] = []
    if isinstance(inputs, (str, Path)) or (
            isinstance(inputs, (list, tuple)) and len(inputs) == 1
            and str(inputs[0]).endswith(".npz")):
        trace_path = inputs if isinstance(inputs, (str, Path)) else inputs[0]
        trace = load_trace(trace_path)
        kernels = [e.kernel for e in trace.entries]
        labels = labels or [f"step {e.step}" for e in trace.entries]
    else:
        for p in inputs:
            kernels.append(load_kernel(p))
        labels = labels or [Path(p).stem for p in inputs]
    if not kernels:
        raise ValueError("no kernels to plot")
    vmax = max(float(k.values.max()) for k in kernels)
    n = len(kernels)
    fig, axes = plt.subplots(1, n, figsize=(2.2 * n, 2.6), squeeze=False)
    for ax, k, label in zip(axes[0], kernels, labels):
        ax.imshow(k.values, vmin=0.0, vmax=vmax, cmap="viridis")
        ax.set_title(label, fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    out_image = Path(out_image)
    out_image.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_image, dpi=120)
    plt.close(fig)
    return {"cells": n, "out": str(out_image)}
