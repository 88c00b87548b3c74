"""Bi-level meta-training of the kernel-estimating GAN.

Each outer step samples a task, runs a fixed number of simultaneous SGD
updates on cloned generator/discriminator parameters, records the supervised
meta-objectives at regular interval checkpoints, and applies the first-order
meta-gradient (the booked losses differentiated at their own checkpoints,
combined with a decaying weight vector) to the base parameters via Adam.
"""

from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .degrade import (Task, pad_to_minimum, patch_selection_probabilities,
                      sample_patch_pair, sample_task, task_luminance)
from .kernels import KernelDistribution
from .losses import LossLog, LossWeights, meta_losses, task_losses
from .nets import (DEFAULT_INIT_NOISE, Discriminator, Generator, init_discriminator,
                   init_generator, models_from_payload, models_payload)

log = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    """A task produced a non-finite loss during adaptation."""


@dataclass
class MetaConfig:
    """Hyperparameters of the meta-training loop."""

    steps: int = 100_000          # outer meta-optimization steps
    adapt_steps: int = 25         # inner adaptation steps per task
    eval_interval: int = 5        # meta-objectives recorded every this many inner steps
    inner_lr_g: float = 0.01
    inner_lr_d: float = 0.2
    outer_lr_g: float = 1e-4
    outer_lr_d: float = 1e-4
    task_batch_size: int = 1
    d_patch: int = 32
    weights: LossWeights = field(default_factory=LossWeights)
    crop: int = 192
    scale: int = 2
    patches_per_step: int = 1
    gen_channels: int = 64
    disc_channels: int = 64
    init_noise: float = DEFAULT_INIT_NOISE
    weight_clamp: str = "max"     # floor reading of the decay schedule; "min" for the printed variant
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.adapt_steps % self.eval_interval:
            raise ValueError("adapt_steps must be divisible by eval_interval")
        for name in ("inner_lr_g", "inner_lr_d", "outer_lr_g", "outer_lr_d"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.weight_clamp not in ("max", "min"):
            raise ValueError("weight_clamp must be 'max' or 'min'")

    @property
    def interval_count(self) -> int:
        return self.adapt_steps // self.eval_interval

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetaConfig":
        d = dict(d)
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


@dataclass
class LossBook:
    """Per-task meta-objective values recorded at interval checkpoints."""

    g: list = field(default_factory=list)
    d: list = field(default_factory=list)


def get_interval_loss_weights(j: int, count: int, clamp: str = "max") -> np.ndarray:
    """Weight vector over the interval checkpoints at outer step j (0-based).

    The first count-1 weights start equal at 1/count and decay linearly with j
    down to a floor of 0.03/count; the last weight absorbs the remainder so the
    vector sums to one exactly. clamp="min" keeps the non-floored variant in
    which early weights go negative for large j.
    """
    if j < 0:
        raise ValueError("outer step must be non-negative")
    if count < 1:
        raise ValueError("count must be positive")
    head = 1.0 / count - j * 3.0 / (count * 10000.0)
    floor = 0.03 / count
    head = max(head, floor) if clamp == "max" else min(head, floor)
    w = np.full(count, head, dtype=np.float64)
    w[-1] = 1.0 - float(w[:-1].sum())
    return w


def _lum_task(task: Task) -> Task:
    """Single-channel view of the task, padded so GAN patches always fit."""
    lum = task_luminance(task)
    return dataclasses.replace(task, lr_image=lum)


def prepare_task_patches(task: Task, d_patch: int):
    """Luminance view plus its gradient-magnitude patch probability map."""
    t = _lum_task(task)
    g_size = d_patch * task.scale
    t.lr_image = pad_to_minimum(t.lr_image, g_size)
    probs = patch_selection_probabilities(t.lr_image, g_size)
    return t, probs


def draw_pairs(task: Task, probs, d_patch: int, rng, n: int):
    return [sample_patch_pair(task, probs, d_patch, rng) for _ in range(n)]


def sgd_gan_step(gen: Generator, disc: Discriminator, pairs,
                 sum_to_one_weight: float, lr_g: float, lr_d: float
                 ) -> tuple[float, float]:
    """One simultaneous update: both gradients taken at the pre-update
    parameters, then both applied."""
    loss_g, loss_d = task_losses(gen, disc, pairs, sum_to_one_weight)
    if not (torch.isfinite(loss_g) and torch.isfinite(loss_d)):
        raise NonFiniteLossError(
            f"non-finite task losses: g={float(loss_g.detach())}, "
            f"d={float(loss_d.detach())}")
    gen_params = [p for p in gen.parameters() if p.requires_grad]
    disc_params = [p for p in disc.parameters() if p.requires_grad]
    g_grads = torch.autograd.grad(loss_g, gen_params, retain_graph=True)
    d_grads = torch.autograd.grad(loss_d, disc_params)
    with torch.no_grad():
        for p, grad in zip(gen_params, g_grads):
            p.add_(grad, alpha=-lr_g)
        for p, grad in zip(disc_params, d_grads):
            p.add_(grad, alpha=-lr_d)
    return float(loss_g.detach()), float(loss_d.detach())


def inner_adapt(gen: Generator, disc: Discriminator, task: Task,
                config: MetaConfig, rng: np.random.Generator,
                interval_weights: np.ndarray | None = None):
    """Adapt clones of the base networks to one task.

    Returns (adapted generator, adapted discriminator, loss book, meta-grads).
    When interval_weights is given, the booked meta-objectives are also
    differentiated w.r.t. the adapted parameters at their own checkpoints
    (first order) and accumulated into weighted meta-gradient lists.
    """
    gen_i, disc_i = gen.clone(), disc.clone()
    gen_params = [p for p in gen_i.parameters() if p.requires_grad]
    disc_params = [p for p in disc_i.parameters() if p.requires_grad]
    lum_task, probs = prepare_task_patches(task, config.d_patch)
    book = LossBook()
    collect = interval_weights is not None
    meta_grads_g = [torch.zeros_like(p) for p in gen_params] if collect else None
    meta_grads_d = [torch.zeros_like(p) for p in disc_params] if collect else None

    for step in range(1, config.adapt_steps + 1):
        pairs = draw_pairs(lum_task, probs, config.d_patch, rng, config.patches_per_step)
        sgd_gan_step(gen_i, disc_i, pairs, config.weights.sum_to_one,
                     config.inner_lr_g, config.inner_lr_d)
        if step % config.eval_interval == 0:
            query = draw_pairs(lum_task, probs, config.d_patch, rng,
                               config.patches_per_step)
            loss_g_meta, loss_d_meta = meta_losses(
                gen_i, disc_i, query, task.gt_kernel, config.weights)
            if not (torch.isfinite(loss_g_meta) and torch.isfinite(loss_d_meta)):
                raise NonFiniteLossError("non-finite meta losses")
            book.g.append(float(loss_g_meta.detach()))
            book.d.append(float(loss_d_meta.detach()))
            if collect:
                idx = step // config.eval_interval - 1
                w = float(interval_weights[idx])
                gg = torch.autograd.grad(loss_g_meta, gen_params, retain_graph=True)
                gd = torch.autograd.grad(loss_d_meta, disc_params)
                with torch.no_grad():
                    for acc, grad in zip(meta_grads_g, gg):
                        acc.add_(grad, alpha=w)
                    for acc, grad in zip(meta_grads_d, gd):
                        acc.add_(grad, alpha=w)
    return gen_i, disc_i, book, (meta_grads_g, meta_grads_d)


def _atomic_torch_save(payload: dict, path: Path):
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def payloads_equal(a, b) -> bool:
    """Bit-exact content equality of checkpoint payloads. The serialized files
    themselves are not comparable (the container embeds timestamps and heap
    storage keys), so reproducibility is defined over the stored values."""
    if isinstance(a, torch.Tensor) or isinstance(b, torch.Tensor):
        return (isinstance(a, torch.Tensor) and isinstance(b, torch.Tensor)
                and a.dtype == b.dtype and a.shape == b.shape and torch.equal(a, b))
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return (isinstance(a, np.ndarray) and isinstance(b, np.ndarray)
                and a.dtype == b.dtype and np.array_equal(a, b))
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(payloads_equal(a[k], b[k]) for k in a)
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(payloads_equal(x, y) for x, y in zip(a, b))
    return a == b


def training_checkpoint(gen, disc, opt_g, opt_d, step, config, rng) -> dict:
    payload = models_payload(gen, disc)
    payload.update({
        "step": step,
        "optimizer_g": opt_g.state_dict(),
        "optimizer_d": opt_d.state_dict(),
        "np_rng_state": rng.bit_generator.state,
        "torch_rng_state": torch.get_rng_state(),
        "meta_config": config.to_dict(),
    })
    return payload


def meta_train(dataset, kernel_dist: KernelDistribution, config: MetaConfig,
               rng_seed: int = 0, checkpoint_dir=None, resume=None,
               progress_every: int = 100):
    """Run the full meta-training loop and return the meta-learned networks.

    dataset: sequence of HR arrays or (id, array) pairs; converted to
    luminance up front (the GAN only ever consumes single-channel patches).
    resume: path to a training checkpoint to continue from; the numpy/torch
    RNG states stored there make train(k)+resume(m) equal train(k+m).
    """
    dataset_y = []
    for i, entry in enumerate(dataset):
        if isinstance(entry, tuple):
            source_id, img = entry
        else:
            source_id, img = str(i), entry
        img = np.asarray(img, dtype=np.float64)
        if img.ndim == 3:
            img = img @ np.array([0.299, 0.587, 0.114])
        dataset_y.append((source_id, img))
    if not dataset_y:
        raise ValueError("meta_train requires a non-empty dataset")

    if resume is not None:
        payload = torch.load(resume, map_location="cpu", weights_only=False)
        gen, disc = models_from_payload(payload)
        opt_g = torch.optim.Adam(gen.parameters(), lr=config.outer_lr_g)
        opt_d = torch.optim.Adam(disc.parameters(), lr=config.outer_lr_d)
        opt_g.load_state_dict(payload["optimizer_g"])
        opt_d.load_state_dict(payload["optimizer_d"])
        rng = np.random.default_rng()
        rng.bit_generator.state = payload["np_rng_state"]
        torch.set_rng_state(payload["torch_rng_state"])
        start_step = int(payload["step"])
    else:
        seeds = np.random.SeedSequence(rng_seed).spawn(4)
        # The loop draws nothing from torch's global RNG, but module
        # constructors do; pinning it keeps checkpoints a pure function of
        # (dataset, config, seed).
        torch.manual_seed(int(seeds[3].generate_state(1)[0]) % (2 ** 63))
        gen = init_generator(config.scale, rng_seed=int(seeds[0].generate_state(1)[0]),
                             hidden_channels=config.gen_channels,
                             noise_scale=config.init_noise)
        disc = init_discriminator(rng_seed=int(seeds[1].generate_state(1)[0]),
                                  hidden_channels=config.disc_channels)
        opt_g = torch.optim.Adam(gen.parameters(), lr=config.outer_lr_g)
        opt_d = torch.optim.Adam(disc.parameters(), lr=config.outer_lr_d)
        rng = np.random.default_rng(seeds[2])
        start_step = 0

    loss_log = None
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        loss_log = LossLog(checkpoint_dir / "train_log.jsonl")

    for j in range(start_step, config.steps):
        interval_weights = get_interval_loss_weights(
            j, config.interval_count, config.weight_clamp)
        sum_mg_g = None
        sum_mg_d = None
        booked = []
        for _ in range(config.task_batch_size):
            for attempt in range(10):
                task = sample_task(dataset_y, kernel_dist, scale=config.scale,
                                   crop=config.crop, rng_seed=rng)
                try:
                    _, _, book, (mg_g, mg_d) = inner_adapt(
                        gen, disc, task, config, rng, interval_weights)
                except NonFiniteLossError as exc:
                    log.warning("outer step %d: %s; resampling task (%d)",
                                j, exc, attempt + 1)
                    continue
                booked.append(book)
                if sum_mg_g is None:
                    sum_mg_g, sum_mg_d = mg_g, mg_d
                else:
                    with torch.no_grad():
                        for acc, grad in zip(sum_mg_g, mg_g):
                            acc.add_(grad)
                        for acc, grad in zip(sum_mg_d, mg_d):
                            acc.add_(grad)
                break
            else:
                raise RuntimeError(f"outer step {j}: no finite task after 10 resamples")

        opt_g.zero_grad(set_to_none=True)
        opt_d.zero_grad(set_to_none=True)
        gen_params = [p for p in gen.parameters() if p.requires_grad]
        disc_params = [p for p in disc.parameters() if p.requires_grad]
        for p, grad in zip(gen_params, sum_mg_g):
            p.grad = grad
        for p, grad in zip(disc_params, sum_mg_d):
            p.grad = grad
        opt_g.step()
        opt_d.step()

        if loss_log is not None and (j % progress_every == 0 or j == config.steps - 1):
            wg = float(np.mean([np.dot(interval_weights, b.g) for b in booked]))
            wd = float(np.mean([np.dot(interval_weights, b.d) for b in booked]))
            loss_log.append_many(j, {"meta_g_weighted": wg, "meta_d_weighted": wd})
        if checkpoint_dir is not None and (
                (j + 1) % config.checkpoint_every == 0 or j + 1 == config.steps):
            payload = training_checkpoint(gen, disc, opt_g, opt_d, j + 1, config, rng)
            _atomic_torch_save(payload, checkpoint_dir / f"ckpt_step{j + 1:07d}.pt")
            _atomic_torch_save(payload, checkpoint_dir / "ckpt_latest.pt")

    if checkpoint_dir is not None:
        payload = training_checkpoint(gen, disc, opt_g, opt_d, config.steps, config, rng)
        _atomic_torch_save(payload, checkpoint_dir / "ckpt_final.pt")
    return gen, disc
