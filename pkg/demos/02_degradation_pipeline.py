"""Degradation model and task construction walkthrough.

Builds low-resolution images from a high-resolution source via blur +
subsample + optional noise, then shows the gradient-magnitude patch sampler
that feeds the GAN during adaptation.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from metakernel import (GaussianSpec, KernelDistribution, degrade_image,
                        patch_selection_probabilities, sample_gaussian_kernel,
                        sample_patch_pair, sample_task)
from demo_utils import OUT_DIR, textured_image

hr = textured_image(seed=3, size=256)
kernel = sample_gaussian_kernel(GaussianSpec(theta=1.1, lambda1=3.0, lambda2=0.8), 11)

# --- the three benchmark flavours --------------------------------------------
lr_clean = degrade_image(hr, kernel, scale=2)
lr_noisy = degrade_image(hr, kernel, scale=2, noise_level=0.0392, rng_seed=0)
lr_x4 = degrade_image(hr, kernel, scale=4) if hr.shape[0] % 4 == 0 else None
print(f"HR {hr.shape} -> LR {lr_clean.shape} (x2), noisy sigma=10/255")

# A constant region stays constant: the kernel is a unit-mass average.
flat = degrade_image(np.full((64, 64), 0.5), kernel, 2)
print(f"constant-image conservation error: {np.abs(flat - 0.5).max():.2e}")

# --- training tasks -----------------------------------------------------------
dataset = [(f"img{i}", textured_image(seed=i, size=256)) for i in range(4)]
task = sample_task(dataset, KernelDistribution(), scale=2, crop=192, rng_seed=5)
print(f"sampled task: lr {task.lr_image.shape}, kernel {task.gt_kernel.size}x"
      f"{task.gt_kernel.size}, augmentation {task.augmentation}")

# --- gradient-magnitude patch sampling ---------------------------------------
probs = patch_selection_probabilities(task.lr_image, patch_size=64)
g_patch, d_patch = sample_patch_pair(task, probs, d_patch=32, rng_seed=1)
print(f"generator patch {g_patch.shape}, discriminator real patch {d_patch.shape} "
      "(top-left quarter of the same region)")

fig, axes = plt.subplots(1, 5, figsize=(15, 3.2))
for ax, (title, img) in zip(axes, [
        ("HR source", hr), ("LR x2", lr_clean), ("LR x2 + noise", lr_noisy),
        ("patch probabilities", probs.probs), ("generator patch", g_patch)]):
    ax.imshow(img, cmap="gray" if img.ndim == 2 else None)
    ax.set_title(title, fontsize=9)
    ax.axis("off")
fig.tight_layout()
out = OUT_DIR / "degradation_pipeline.png"
fig.savefig(out, dpi=110)
print(f"wrote {out}")
