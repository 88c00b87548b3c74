"""Per-image unsupervised adaptation from a meta-learned initialization.

Adaptation clones the meta-learned networks, runs the same simultaneous SGD
updates as the inner training loop on patches of the given LR image (with a
step-decayed generator learning rate), and decodes + post-processes the
generator's kernel. The contract is "always return a usable kernel": a
non-finite loss aborts adaptation and falls back on the best kernel seen so
far (lowest sum-to-one residual), flagged as degraded.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import torch

from .degrade import pad_to_minimum, patch_selection_probabilities, sample_patch_pair_from_image
from .errors import DegenerateKernelError
from .images import luminance
from .kernels import Kernel, discretized_covariance, shift_kernel_to_center
from .losses import sum_to_one_loss
from .metalearn import NonFiniteLossError, sgd_gan_step
from .metrics import covariance_distance
from .nets import Discriminator, Generator, derive_kernel


@dataclass
class AdaptConfig:
    """Hyperparameters of the per-image adaptation loop."""

    steps: int = 200
    inner_lr_g: float = 0.01
    inner_lr_d: float = 0.2               # not decayed
    lr_decay_milestones: tuple = (50, 200)  # divide the generator lr by the factor after these steps
    lr_decay_factor: float = 10.0
    sum_to_one_weight: float = 0.5
    d_patch: int = 32
    patches_per_step: int = 1
    record_trajectory: bool = False
    snapshot_steps: tuple = (25, 50, 100, 200)
    snapshot_every_step: bool = False

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if list(self.lr_decay_milestones) != sorted(self.lr_decay_milestones):
            raise ValueError("lr_decay_milestones must be sorted")


@dataclass
class TraceEntry:
    step: int
    kernel: Kernel
    loss_g: float
    loss_d: float


@dataclass
class AdaptationTrace:
    entries: list = field(default_factory=list)
    degraded: bool = False

    def steps(self) -> list[int]:
        return [e.step for e in self.entries]

    def kernel_at(self, step: int) -> Kernel:
        for e in self.entries:
            if e.step == step:
                return e.kernel
        raise KeyError(f"no trace entry at step {step}")


def postprocess_kernel(raw: Kernel) -> Kernel:
    """Clamp negative mass, center, and renormalize an estimated kernel."""
    values = np.maximum(raw.values, 0.0)
    total = values.sum()
    if total <= 1e-12:
        raise DegenerateKernelError("post-processing clamped away all kernel mass")
    k = Kernel(values / total, scale=raw.scale, provenance="estimated")
    return shift_kernel_to_center(k)


def _decayed_lr(config: AdaptConfig, step: int) -> float:
    passed = sum(1 for m in config.lr_decay_milestones if step > m)
    return config.inner_lr_g / (config.lr_decay_factor ** passed)


def _safe_snapshot(gen: Generator) -> Kernel:
    raw = derive_kernel(gen)
    try:
        return postprocess_kernel(raw)
    except DegenerateKernelError:
        return raw


def estimate_kernel(lr_image: np.ndarray, gen: Generator, disc: Discriminator,
                    config: AdaptConfig | None = None, rng_seed=None
                    ) -> tuple[Kernel, AdaptationTrace]:
    """Adapt to one LR image and return the post-processed kernel estimate.

    The networks passed in are never mutated; adaptation runs on clones.
    With steps=0 the learned prior kernel (post-processed, unadapted) is
    returned. The image is padded to the minimum patch size if needed.
    """
    config = config or AdaptConfig()
    rng = np.random.default_rng(rng_seed) if not isinstance(rng_seed, np.random.Generator) else rng_seed
    trace = AdaptationTrace()

    gen_i, disc_i = gen.clone(), disc.clone()
    if config.steps == 0:
        return postprocess_kernel(derive_kernel(gen_i)), trace

    lum = pad_to_minimum(luminance(np.asarray(lr_image, dtype=np.float64)),
                         config.d_patch * 2)
    probs = patch_selection_probabilities(lum, config.d_patch * 2)

    best_kernel = derive_kernel(gen_i)
    best_sto = float(sum_to_one_loss(torch.from_numpy(best_kernel.values)))
    for step in range(1, config.steps + 1):
        pairs = [sample_patch_pair_from_image(lum, probs, config.d_patch, 2, rng)
                 for _ in range(config.patches_per_step)]
        try:
            loss_g, loss_d = sgd_gan_step(
                gen_i, disc_i, pairs, config.sum_to_one_weight,
                _decayed_lr(config, step), config.inner_lr_d)
        except NonFiniteLossError:
            trace.degraded = True
            return postprocess_kernel(best_kernel), trace
        current = derive_kernel(gen_i)
        sto = float(sum_to_one_loss(torch.from_numpy(current.values)))
        if np.isfinite(sto) and sto < best_sto:
            best_sto, best_kernel = sto, current
        if config.record_trajectory and (
                config.snapshot_every_step or step in config.snapshot_steps):
            trace.entries.append(TraceEntry(step, _safe_snapshot(gen_i), loss_g, loss_d))

    return postprocess_kernel(derive_kernel(gen_i)), trace


def fallback_indicator(est_adapted: Kernel, est_initial: Kernel, gt: Kernel) -> float:
    """How much closer the adapted kernel stayed to its initialization than to
    the ground truth, in covariance distance; zero means no fallback."""
    cov_adapted = discretized_covariance(est_adapted)
    to_gt = covariance_distance(cov_adapted, discretized_covariance(gt))
    to_init = covariance_distance(cov_adapted, discretized_covariance(est_initial))
    return max(to_gt - to_init, 0.0)


def save_trace(trace: AdaptationTrace, path):
    """Persist a trajectory as a self-describing npz archive."""
    arrays = {
        "steps": np.array(trace.steps(), dtype=np.int64),
        "degraded": np.array(trace.degraded),
        "loss_g": np.array([e.loss_g for e in trace.entries]),
        "loss_d": np.array([e.loss_d for e in trace.entries]),
    }
    for e in trace.entries:
        arrays[f"kernel_{e.step}"] = e.kernel.values
        arrays[f"scale_{e.step}"] = np.int64(e.kernel.scale)
    np.savez(path, **arrays)


def load_trace(path) -> AdaptationTrace:
    with np.load(path, allow_pickle=False) as data:
        steps = [int(s) for s in data["steps"]]
        trace = AdaptationTrace(degraded=bool(data["degraded"]))
        for i, step in enumerate(steps):
            k = Kernel(data[f"kernel_{step}"], scale=int(data[f"scale_{step}"]),
                       provenance="estimated")
            trace.entries.append(TraceEntry(step, k, float(data["loss_g"][i]),
                                            float(data["loss_d"][i])))
    return trace
