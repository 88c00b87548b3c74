"""The kernel-generating GAN: deep linear generator, discriminator, and the
decoder that reads the generator's effective blur kernel.

The generator is a pure stack of convolutions (no bias, no nonlinearity) with
spatial kernel sizes [7,3,3,1,1,1] and stride 2 on the last layer, so its
action on a patch is exactly "convolve with an 11x11 kernel, subsample by 2".
Feeding a centered unit impulse through a stride-1 copy of the stack reads
that kernel out explicitly.
"""

from __future__ import annotations

import copy

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import SizingError, UnsupportedScaleError
from .kernels import Kernel

GEN_KERNEL_SIZES = (7, 3, 3, 1, 1, 1)
GEN_STRIDES = (1, 1, 1, 1, 1, 2)
DISC_KERNEL_SIZES = (7, 1, 1, 1, 1, 1, 1)
KERNEL_SIZE = 11  # composed receptive field of the generator
DEFAULT_INIT_NOISE = 0.025


class Generator(nn.Module):
    """Deep linear downsampler. Input: (N, C, H, W) luminance patches."""

    def __init__(self, hidden_channels: int = 64, image_channels: int = 1):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.image_channels = image_channels
        channels = (
            [image_channels]
            + [hidden_channels] * (len(GEN_KERNEL_SIZES) - 1)
            + [image_channels]
        )
        self.convs = nn.ModuleList(
            nn.Conv2d(channels[i], channels[i + 1], GEN_KERNEL_SIZES[i],
                      stride=GEN_STRIDES[i], bias=False)
            for i in range(len(GEN_KERNEL_SIZES))
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] < KERNEL_SIZE or x.shape[-2] < KERNEL_SIZE:
            raise SizingError(
                f"generator input must be at least {KERNEL_SIZE}x{KERNEL_SIZE}, "
                f"got {tuple(x.shape[-2:])}"
            )
        for conv in self.convs:
            x = conv(x)
        return x

    def forward_stride1(self, x: torch.Tensor) -> torch.Tensor:
        """The stride-1 copy used by the kernel decoder."""
        for conv in self.convs:
            x = F.conv2d(x, conv.weight, stride=1)
        return x

    def effective_kernel(self) -> torch.Tensor:
        """Differentiable 11x11 kernel read out via the impulse response."""
        m = KERNEL_SIZE
        p = next(self.parameters())
        impulse = torch.zeros(1, self.image_channels, 2 * m - 1, 2 * m - 1,
                              dtype=p.dtype, device=p.device)
        impulse[0, :, m - 1, m - 1] = 1.0
        out = self.forward_stride1(impulse)
        return out[0, 0]

    def clone(self) -> "Generator":
        return copy.deepcopy(self)


def output_size_generator(input_size: int) -> int:
    """Spatial output side for a square input of the given side."""
    return (input_size - KERNEL_SIZE) // 2 + 1


def init_generator(scale: int = 2, rng_seed: int = 0, hidden_channels: int = 64,
                   noise_scale: float = DEFAULT_INIT_NOISE) -> Generator:
    """Delta-plus-noise initialization: the noiseless construction routes unit
    mass through the spatial centers (so the decoded kernel is an exact delta)
    and Gaussian noise of relative scale `noise_scale` is added on top.

    The GAN always operates at scale 2; x4 kernels are derived analytically.
    """
    if scale != 2:
        raise UnsupportedScaleError(f"the GAN operates at scale 2 only, got {scale}")
    gen = Generator(hidden_channels=hidden_channels)
    g = torch.Generator().manual_seed(rng_seed)
    c = hidden_channels
    with torch.no_grad():
        for i, conv in enumerate(gen.convs):
            w = conv.weight
            out_c, in_c, k, _ = w.shape
            base = torch.zeros_like(w)
            if i == 0:
                base[:, :, k // 2, k // 2] = 1.0 / c
            elif i == len(gen.convs) - 1:
                base[:, :, k // 2, k // 2] = 1.0
            else:
                eye = torch.eye(out_c, in_c)
                base[:, :, k // 2, k // 2] = eye
            # Noise scaled so every layer perturbs its own passthrough magnitude
            # comparably; layer 1 carries 1/c mass per channel.
            ref = 1.0 / c if i == 0 else 1.0
            noise = torch.empty_like(w).normal_(0.0, 1.0, generator=g)
            w.copy_(base + noise_scale * ref * noise / np.sqrt(in_c * k * k))
    return gen


class Discriminator(nn.Module):
    """Patch realness critic: 7 convolutions with spectral normalization,
    batch norm and ReLU on all but the last layer, which ends in a sigmoid.

    train_mode is an explicit forward argument: it controls whether batch norm
    uses batch statistics (and updates running ones) and whether spectral norm
    runs one power-iteration step before normalizing. Power-iteration vectors
    and running statistics are registered buffers, so they travel with
    state_dict checkpoints and deepcopy clones.
    """

    def __init__(self, hidden_channels: int = 64, in_channels: int = 1,
                 rng_seed: int = 0):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.in_channels = in_channels
        n = len(DISC_KERNEL_SIZES)
        channels = [in_channels] + [hidden_channels] * (n - 1) + [1]
        g = torch.Generator().manual_seed(rng_seed)
        self.weights = nn.ParameterList()
        for i, k in enumerate(DISC_KERNEL_SIZES):
            out_c, in_c = channels[i + 1], channels[i]
            fan_in = in_c * k * k
            w = torch.empty(out_c, in_c, k, k).normal_(
                0.0, float(np.sqrt(2.0 / fan_in)), generator=g)
            self.weights.append(nn.Parameter(w))
            u = torch.empty(out_c).normal_(generator=g)
            v = torch.empty(fan_in).normal_(generator=g)
            self.register_buffer(f"sn_u{i}", F.normalize(u, dim=0))
            self.register_buffer(f"sn_v{i}", F.normalize(v, dim=0))
        self.final_bias = nn.Parameter(torch.zeros(1))
        self.bn_weights = nn.ParameterList(
            nn.Parameter(torch.ones(hidden_channels)) for _ in range(n - 1))
        self.bn_biases = nn.ParameterList(
            nn.Parameter(torch.zeros(hidden_channels)) for _ in range(n - 1))
        for i in range(n - 1):
            self.register_buffer(f"bn_mean{i}", torch.zeros(hidden_channels))
            self.register_buffer(f"bn_var{i}", torch.ones(hidden_channels))

    def spectral_normalized_weight(self, i: int, train_mode: bool) -> torch.Tensor:
        w = self.weights[i]
        mat = w.view(w.shape[0], -1)
        u = getattr(self, f"sn_u{i}")
        v = getattr(self, f"sn_v{i}")
        if train_mode:
            with torch.no_grad():
                v.copy_(F.normalize(mat.t() @ u, dim=0, eps=1e-12))
                u.copy_(F.normalize(mat @ v, dim=0, eps=1e-12))
        # Snapshot the power-iteration vectors: sigma must reference this
        # forward's estimate even after later forwards update the buffers.
        sigma = torch.dot(u.clone(), mat @ v.clone())
        return w / sigma

    def forward(self, x: torch.Tensor, train_mode: bool = True) -> torch.Tensor:
        if x.shape[-1] < DISC_KERNEL_SIZES[0] or x.shape[-2] < DISC_KERNEL_SIZES[0]:
            raise SizingError(
                f"discriminator input must be at least 7x7, got {tuple(x.shape[-2:])}"
            )
        n = len(DISC_KERNEL_SIZES)
        for i in range(n):
            w = self.spectral_normalized_weight(i, train_mode)
            bias = self.final_bias if i == n - 1 else None
            x = F.conv2d(x, w, bias=bias, stride=1)
            if i < n - 1:
                x = F.batch_norm(
                    x, getattr(self, f"bn_mean{i}"), getattr(self, f"bn_var{i}"),
                    self.bn_weights[i], self.bn_biases[i],
                    training=train_mode, momentum=0.1, eps=1e-5)
                x = F.relu(x)
        return torch.sigmoid(x)

    def clone(self) -> "Discriminator":
        return copy.deepcopy(self)


def init_discriminator(rng_seed: int = 0, hidden_channels: int = 64) -> Discriminator:
    return Discriminator(hidden_channels=hidden_channels, rng_seed=rng_seed)


def output_size_discriminator(input_size: int) -> int:
    return input_size - (DISC_KERNEL_SIZES[0] - 1)


def to_tensor_patch(patch: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """(H, W) numpy patch -> (1, 1, H, W) tensor."""
    return torch.from_numpy(np.ascontiguousarray(patch)).to(dtype)[None, None]


def derive_kernel(gen: Generator) -> Kernel:
    """Read the generator's effective kernel; no post-processing applied."""
    with torch.no_grad():
        values = gen.effective_kernel().detach().cpu().numpy().astype(np.float64)
    return Kernel(values, scale=2, provenance="estimated")


# ---------------------------------------------------------------------------
# Checkpoints: a versioned payload of name->array state maps (parameters plus
# batch-norm running statistics and spectral-norm power-iteration vectors).
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def models_payload(gen: Generator, disc: Discriminator) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "generator": {
            "config": {"hidden_channels": gen.hidden_channels,
                       "image_channels": gen.image_channels},
            "state": gen.state_dict(),
        },
        "discriminator": {
            "config": {"hidden_channels": disc.hidden_channels,
                       "in_channels": disc.in_channels},
            "state": disc.state_dict(),
        },
    }


def models_from_payload(payload: dict) -> tuple[Generator, Discriminator]:
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version}")
    gen = Generator(**payload["generator"]["config"])
    gen.load_state_dict(payload["generator"]["state"])
    disc = Discriminator(**payload["discriminator"]["config"])
    disc.load_state_dict(payload["discriminator"]["state"])
    return gen, disc


def save_models(path, gen: Generator, disc: Discriminator, extra: dict | None = None):
    payload = models_payload(gen, disc)
    if extra:
        payload.update(extra)
    torch.save(payload, path)


def load_models(path) -> tuple[Generator, Discriminator]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    return models_from_payload(payload)
