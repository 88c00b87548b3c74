"""Scalar objectives: the L1 LSGAN pair, sum-to-one and kernel pixel terms,
and the task / meta composites built from them.

All losses are differentiable torch scalars. Opponent-as-constant semantics
are realized at the gradient call site: differentiating a composite w.r.t.
one network's parameters leaves the other's untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .nets import Discriminator, Generator, to_tensor_patch


@dataclass
class LossWeights:
    """Weights of the meta-objective terms."""

    kernel: float = 1.0        # supervised kernel pixel term
    adversarial: float = 1.0   # generator LSGAN term
    sum_to_one: float = 0.5    # kernel mass penalty

    def __post_init__(self):
        for name in ("kernel", "adversarial", "sum_to_one"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")


def lsgan_generator_loss(d_out_on_fake: torch.Tensor) -> torch.Tensor:
    """Mean absolute distance of the fake realness map from the real target 1."""
    if d_out_on_fake.numel() == 0:
        raise ValueError("empty realness map")
    return (d_out_on_fake - 1.0).abs().mean()


def lsgan_discriminator_loss(d_out_on_real: torch.Tensor,
                             d_out_on_fake: torch.Tensor) -> torch.Tensor:
    """Half the real map's distance from 1 plus half the fake map's distance from 0."""
    if d_out_on_real.numel() == 0 or d_out_on_fake.numel() == 0:
        raise ValueError("empty realness map")
    return 0.5 * (d_out_on_real - 1.0).abs().mean() + 0.5 * d_out_on_fake.abs().mean()


def sum_to_one_loss(kernel: torch.Tensor) -> torch.Tensor:
    """|1 - sum of kernel entries|."""
    return (1.0 - torch.as_tensor(kernel).sum()).abs()


def kernel_pixel_loss(k_gt, k_est) -> torch.Tensor:
    """Entrywise L1 distance between two equally sized kernel grids."""
    gt = torch.as_tensor(np.asarray(k_gt) if not torch.is_tensor(k_gt) else k_gt)
    est = torch.as_tensor(np.asarray(k_est) if not torch.is_tensor(k_est) else k_est)
    if gt.shape != est.shape:
        raise ValueError(f"kernel shapes differ: {tuple(gt.shape)} vs {tuple(est.shape)}")
    return (est - gt.to(est.dtype)).abs().sum()


def gan_forward(gen: Generator, disc: Discriminator, patch_pairs,
                train_mode: bool = True) -> tuple[torch.Tensor, torch.Tensor]:
    """Run the GAN on a mini-batch of (generator patch, real patch) pairs.

    Returns (realness on real patches, realness on generated patches). One
    discriminator forward per patch set; the fake map carries the graph into
    the generator so it can back both composites.
    """
    dtype = next(gen.parameters()).dtype
    g_in = torch.cat([to_tensor_patch(g, dtype) for g, _ in patch_pairs])
    real = torch.cat([to_tensor_patch(d, dtype) for _, d in patch_pairs])
    fake = gen(g_in)
    d_fake = disc(fake, train_mode=train_mode)
    d_real = disc(real, train_mode=train_mode)
    return d_real, d_fake


def task_losses(gen: Generator, disc: Discriminator, patch_pairs,
                sum_to_one_weight: float = 0.5, train_mode: bool = True
                ) -> tuple[torch.Tensor, torch.Tensor]:
    """The unsupervised adaptation objectives.

    Generator: LSGAN term plus the weighted sum-to-one penalty on the decoded
    kernel. Discriminator: the LSGAN pair term.
    """
    d_real, d_fake = gan_forward(gen, disc, patch_pairs, train_mode)
    loss_g = lsgan_generator_loss(d_fake)
    if sum_to_one_weight:
        loss_g = loss_g + sum_to_one_weight * sum_to_one_loss(gen.effective_kernel())
    loss_d = lsgan_discriminator_loss(d_real, d_fake)
    return loss_g, loss_d


def meta_losses(gen: Generator, disc: Discriminator, patch_pairs, gt_kernel,
                weights: LossWeights, train_mode: bool = True
                ) -> tuple[torch.Tensor, torch.Tensor]:
    """The supervised meta-objectives.

    Generator: weighted kernel pixel loss against the ground truth plus the
    weighted LSGAN and sum-to-one terms. Discriminator: the LSGAN pair term.
    """
    d_real, d_fake = gan_forward(gen, disc, patch_pairs, train_mode)
    k_est = gen.effective_kernel()
    gt = gt_kernel.values if hasattr(gt_kernel, "values") else gt_kernel
    loss_g = (weights.kernel * kernel_pixel_loss(gt, k_est)
              + weights.adversarial * lsgan_generator_loss(d_fake)
              + weights.sum_to_one * sum_to_one_loss(k_est))
    loss_d = lsgan_discriminator_loss(d_real, d_fake)
    return loss_g, loss_d


class LossLog:
    """Line-delimited records log: one JSON object per (step, name, value)."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, step: int, name: str, value: float):
        with open(self.path, "a") as fh:
            fh.write(json.dumps({"step": step, "loss": name, "value": float(value)}) + "\n")

    def append_many(self, step: int, values: dict):
        with open(self.path, "a") as fh:
            for name, value in values.items():
                fh.write(json.dumps({"step": step, "loss": name, "value": float(value)}) + "\n")
