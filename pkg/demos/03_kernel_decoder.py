"""How the generator IS the kernel.

The generator is a stack of convolutions with no bias and no nonlinearity, so
its action is exactly "convolve with one effective kernel, subsample by 2".
Feeding a centered impulse through a stride-1 copy reads that kernel out; this
script cross-checks the decoder against the explicit convolution composition
of the layer weights.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch
from scipy import signal

from metakernel import Generator, derive_kernel, init_generator
from demo_utils import OUT_DIR

torch.manual_seed(4)

# --- decode a random generator's kernel ---------------------------------------
gen = Generator(hidden_channels=16)
decoded = derive_kernel(gen)
print(f"decoded kernel: {decoded.size}x{decoded.size}, sum={decoded.values.sum():.4f} "
      "(random weights: arbitrary mass)")

# --- oracle: compose the layer convolution kernels explicitly ------------------
eff = None
for conv in gen.convs:
    w = conv.weight.detach().numpy().astype(np.float64)[:, :, ::-1, ::-1]
    if eff is None:
        eff = w
        continue
    out = np.zeros((w.shape[0], eff.shape[1],
                    w.shape[2] + eff.shape[2] - 1, w.shape[3] + eff.shape[3] - 1))
    for oc in range(w.shape[0]):
        for ic in range(eff.shape[1]):
            for mc in range(w.shape[1]):
                out[oc, ic] += signal.convolve2d(w[oc, mc], eff[mc, ic], "full")
    eff = out
oracle = eff[0, 0]
print(f"decoder vs composed-convolution oracle: max abs diff "
      f"{np.abs(decoded.values - oracle).max():.2e}")

# --- the delta-plus-noise initialization --------------------------------------
gen0 = init_generator(scale=2, rng_seed=0, hidden_channels=16, noise_scale=0.0)
delta = derive_kernel(gen0)
print(f"noiseless init decodes to an exact delta: center={delta.values[5, 5]:.1f}, "
      f"off-center max={np.abs(np.delete(delta.values.ravel(), 60)).max():.1e}")

gen_init = init_generator(scale=2, rng_seed=0, hidden_channels=16)
near_delta = derive_kernel(gen_init)
print(f"default init is delta plus noise: sum={near_delta.values.sum():.4f}")

# --- the generator really applies that kernel ----------------------------------
x = torch.randn(1, 1, 33, 33, dtype=torch.float64)
out = gen0.double()(x)
subsampled = x[:, :, 5:-5:2, 5:-5:2]
print(f"delta generator == strided subsample: {torch.allclose(out, subsampled)}")

fig, axes = plt.subplots(1, 3, figsize=(9, 3))
for ax, (title, k) in zip(axes, [("random weights", decoded.values),
                                 ("oracle composition", oracle),
                                 ("delta-plus-noise init", near_delta.values)]):
    ax.imshow(k, cmap="viridis")
    ax.set_title(title, fontsize=9)
    ax.axis("off")
fig.tight_layout()
out_path = OUT_DIR / "kernel_decoder.png"
fig.savefig(out_path, dpi=110)
print(f"wrote {out_path}")
