"""Meta-learned blur-kernel estimation for blind super-resolution.

A kernel-generating GAN whose generator and discriminator initializations are
meta-learned over a distribution of synthetic degradation tasks, so that at
inference it adapts to a single LR image in a couple hundred unsupervised
steps and emits an explicit blur-kernel estimate, plus the degradation
simulation and kernel evaluation machinery around it.
"""

from .adapt import AdaptConfig, AdaptationTrace, estimate_kernel, fallback_indicator, postprocess_kernel
from .degrade import (PatchProbabilityMap, Task, degrade_image, pad_to_minimum,
                      patch_selection_probabilities, sample_patch_pair, sample_task)
from .kernels import (CovarianceSummary, GaussianSpec, Kernel, KernelDistribution,
                      delta_kernel, derive_x4_kernel, discretized_covariance,
                      load_kernel, perturb_kernel_multiplicative,
                      sample_gaussian_kernel, save_kernel, shift_kernel_to_center)
from .losses import (LossWeights, kernel_pixel_loss, lsgan_discriminator_loss,
                     lsgan_generator_loss, meta_losses, sum_to_one_loss, task_losses)
from .metalearn import LossBook, MetaConfig, get_interval_loss_weights, inner_adapt, meta_train
from .metrics import (EvalRecord, correlate_gains, image_psnr_ssim_y, kernel_psnr,
                      l_kcov)
from .nets import (Discriminator, Generator, derive_kernel, init_discriminator,
                   init_generator, load_models, save_models)

__version__ = "0.1.0"
