"""Command-line entry points.

Subcommands: meta-train, adapt, gen-bench, evaluate, report, plot-kernel.
The meta-train config file is YAML whose keys mirror MetaConfig fields; see
README for the documented schema.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .adapt import AdaptConfig, estimate_kernel, save_trace
from .harness import (BenchmarkSpec, SRAdapterSpec, evaluate, gen_benchmark,
                      plot_kernels, report_text)
from .images import list_dataset, load_image
from .kernels import derive_x4_kernel, kernel_filename, save_kernel
from .losses import LossWeights
from .metalearn import MetaConfig, meta_train
from .nets import load_models, save_models

log = logging.getLogger(__name__)


def load_meta_config(path) -> MetaConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if "weights" in raw and isinstance(raw["weights"], dict):
        raw["weights"] = LossWeights(**raw["weights"])
    return MetaConfig(**raw)


def _cmd_meta_train(args) -> int:
    config = load_meta_config(args.config) if args.config else MetaConfig()
    dataset = [(p.stem, load_image(p)) for p in list_dataset(args.data)]
    from .kernels import KernelDistribution

    dist = KernelDistribution()
    out = Path(args.out)
    gen, disc = meta_train(dataset, dist, config, rng_seed=args.seed,
                           checkpoint_dir=out, resume=args.resume)
    save_models(out / "models_final.pt", gen, disc)
    print(f"meta-training finished; checkpoints in {out}")
    return 0


def _cmd_adapt(args) -> int:
    gen, disc = load_models(args.ckpt)
    config = AdaptConfig(steps=args.steps, record_trajectory=args.trace)
    image_path = Path(args.image)
    paths = list_dataset(image_path) if image_path.is_dir() else [image_path]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, p in enumerate(paths):
        lr = load_image(p)
        seed = np.random.SeedSequence([args.seed, i])
        kernel, trace = estimate_kernel(lr, gen, disc, config,
                                        np.random.default_rng(seed))
        if args.scale == 4:
            kernel = derive_x4_kernel(kernel)
        kpath = out / kernel_filename(p.stem, args.scale)
        save_kernel(kernel, kpath)
        print(f"{p.name}: kernel -> {kpath}" + (" (degraded)" if trace.degraded else ""))
        if args.trace:
            save_trace(trace, out / f"{p.stem}_x{args.scale}_trace.npz")
    return 0


def _cmd_gen_bench(args) -> int:
    spec = BenchmarkSpec(source=args.data, scale=args.scale, variant=args.variant,
                         kernel_noise_frac=args.kernel_noise,
                         image_noise_level=args.image_noise,
                         master_seed=args.seed,
                         lambda_range=(args.lambda_min, args.lambda_max))
    manifest = gen_benchmark(spec, args.out)
    ok = sum(1 for r in manifest["rows"] if "error" not in r)
    print(f"benchmark written to {args.out}: {ok} images "
          f"({len(manifest['rows']) - ok} skipped), spec hash {manifest['spec_hash']}")
    return 0


def _cmd_evaluate(args) -> int:
    adapter = None
    if args.sr == "bicubic":
        adapter = SRAdapterSpec(mode="builtin_bicubic")
    elif args.sr == "external":
        adapter = SRAdapterSpec(mode="external_process", command=args.sr_command,
                                timeout=args.sr_timeout)
    config = AdaptConfig(steps=args.steps)
    try:
        summary = evaluate(args.bench, args.ckpt, config, args.out,
                           adapter=adapter, runs=args.runs, eval_seed=args.seed,
                           use_gt_kernel=args.use_gt_kernel)
    except ValueError as exc:
        print(f"evaluate: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    print(f"PSNR/SSIM/KPSNR/LKCOV: {summary['cell']}")
    return 0


def _cmd_report(args) -> int:
    print(report_text(args.csv))
    return 0


def _cmd_plot_kernel(args) -> int:
    meta = plot_kernels(args.inputs, args.out)
    print(f"montage with {meta['cells']} cells -> {meta['out']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metakernel",
        description="Meta-learned blur-kernel estimation for blind super-resolution.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("meta-train", help="run the meta-training loop")
    p.add_argument("--config", help="YAML config file (MetaConfig fields)")
    p.add_argument("--data", required=True, help="directory of HR images")
    p.add_argument("--out", required=True, help="checkpoint/output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resume", help="training checkpoint to resume from")
    p.set_defaults(func=_cmd_meta_train)

    p = sub.add_parser("adapt", help="estimate kernels for one image or a directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True, help="LR image file or directory")
    p.add_argument("--scale", type=int, choices=(2, 4), default=2)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", action="store_true", help="record adaptation trajectories")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_adapt)

    p = sub.add_parser("gen-bench", help="generate a degraded benchmark with manifest")
    p.add_argument("--data", required=True, help="directory of HR images")
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=int, choices=(2, 4), default=2)
    p.add_argument("--variant", choices=("gaussian", "non_gaussian", "noisy"),
                   default="gaussian")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernel-noise", type=float, default=0.4, dest="kernel_noise")
    p.add_argument("--image-noise", type=float, default=0.0392, dest="image_noise")
    p.add_argument("--lambda-min", type=float, default=0.35, dest="lambda_min")
    p.add_argument("--lambda-max", type=float, default=5.0, dest="lambda_max")
    p.set_defaults(func=_cmd_gen_bench)

    p = sub.add_parser("evaluate", help="score a checkpoint against a benchmark")
    p.add_argument("--bench", required=True, help="benchmark directory")
    p.add_argument("--ckpt", help="model checkpoint (omit with --use-gt-kernel)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sr", choices=("none", "bicubic", "external"), default="none")
    p.add_argument("--sr-command", default="", dest="sr_command",
                   help="shell command template; {exchange_dir} expands")
    p.add_argument("--sr-timeout", type=float, default=300.0, dest="sr_timeout")
    p.add_argument("--use-gt-kernel", action="store_true", dest="use_gt_kernel",
                   help="inject the ground-truth kernel (upper-bound row)")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="summarize an evaluation CSV")
    p.add_argument("--csv", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("plot-kernel", help="render kernels or a trace as a montage")
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("inputs", nargs="+", help=".kernel files or one trace .npz")
    p.set_defaults(func=_cmd_plot_kernel)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
