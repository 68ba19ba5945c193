"""Command-line front end for the full workflow.

Subcommands: gen-data, train, sample, interpolate, eval-bpd, export-latents,
probe, noise-sweep.  Every command is deterministic given its seed flags.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure.  Module errors print a one-line diagnostic, never a stack trace.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data as dat
from . import latent, probes, training
from .errors import ConfigError, DataError, FlowError, NumericsError
from .rng import Rng


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="factorflow",
                     description="Invertible flow model with a factorized latent space")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic two-factor corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=4000, help="number of images")
    p.add_argument("--size", type=int, default=32, help="image side length")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train on an image corpus")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--log-every", type=int, default=0)

    p = sub.add_parser("sample", help="draw images from a trained model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--temperature", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("interpolate", help="interpolate a factor (or all latents)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--a", required=True, help="first seed image (PGM)")
    p.add_argument("--b", required=True, help="second seed image (PGM)")
    p.add_argument("--factor", default="all", help="factor name, or 'all'")
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-bpd", help="bits/dim of a corpus under a model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0, help="dequantization noise seed")

    p = sub.add_parser("export-latents", help="write a latent table for a corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--which", default="full", help="'full' or a factor name")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("probe", help="fit a probe on an exported latent table")
    p.add_argument("--latents", required=True)
    p.add_argument("--task", choices=["cls", "reg"], required=True)
    p.add_argument("--out", required=True, help="output report CSV")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("noise-sweep", help="latent exports and AUC across noise levels")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--weights", default="0,0.05,0.1,0.2,0.3",
                   help="comma-separated noise weights")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load_model(path):
    state = training.load_checkpoint(path)
    return state.model, state.spec


def _write_images(images_model_domain, out_dir, stem):
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, img in enumerate(images_model_domain):
        path = os.path.join(out_dir, f"{stem}_{i:03d}.pgm")
        dat.write_pgm(path, dat.model_to_uint8(img))
        paths.append(path)
    return paths


def _cmd_gen_data(args) -> int:
    corpus = dat.generate_corpus(Rng(args.seed), args.count, args.size)
    dat.save_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} images to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = training.load_config(args.config) if args.config else training.TrainConfig()
    corpus = dat.load_corpus(args.data)
    result = training.train(config, corpus, args.out, resume_from=args.resume,
                            log_every=args.log_every)
    print(f"trained {result.steps} steps; checkpoint: {result.checkpoint_path}; "
          f"metrics: {result.metrics_path}")
    return 0


def _cmd_sample(args) -> int:
    model, _ = _load_model(args.ckpt)
    images = model.sample(Rng(args.seed), args.temperature, args.n)
    paths = _write_images(images, args.out, "sample")
    print(f"wrote {len(paths)} samples to {args.out}")
    return 0


def _cmd_interpolate(args) -> int:
    model, spec = _load_model(args.ckpt)
    img_a = dat.read_pgm(args.a)[None]
    img_b = dat.read_pgm(args.b)[None]
    if args.factor == "all":
        seq = latent.interpolate_full(model, img_a, img_b, args.steps)
    else:
        seq = latent.interpolate_factor(model, spec, img_a, img_b,
                                        args.factor, args.steps)
    paths = _write_images(seq, args.out, "interp")
    print(f"wrote {len(paths)} frames to {args.out}")
    return 0


def _cmd_eval_bpd(args) -> int:
    model, _ = _load_model(args.ckpt)
    corpus = dat.load_corpus(args.data)
    x = dat.dequantize(corpus.images, model.config.n_bits, Rng(args.seed))
    bpd = float(np.mean(model.bits_per_dim(x)))
    print(f"bits/dim: {bpd!r}")
    return 0


def _cmd_export_latents(args) -> int:
    model, spec = _load_model(args.ckpt)
    corpus = dat.load_corpus(args.data)
    feats = latent.export_latents(model, spec, corpus, which=args.which, path=args.out)
    print(f"wrote {feats.shape[0]} rows x {feats.shape[1]} features to {args.out}")
    return 0


def _cmd_probe(args) -> int:
    _, anomaly, slice_index, feats = latent.read_latent_table(args.latents)
    if args.task == "cls":
        report = probes.classification_report(feats, anomaly, args.seed,
                                              feature_set=os.path.basename(args.latents))
    else:
        report = probes.regression_report(feats, slice_index, args.seed,
                                          feature_set=os.path.basename(args.latents))
    probes.write_probe_report(args.out, [report])
    metrics = ", ".join(f"{k}={v:.4f}" for k, v in sorted(report.metrics.items()))
    print(f"{report.task}: {metrics} (report: {args.out})")
    return 0


def _cmd_noise_sweep(args) -> int:
    model, spec = _load_model(args.ckpt)
    corpus = dat.load_corpus(args.data)
    try:
        weights = [float(w) for w in args.weights.split(",") if w.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --weights list: {args.weights!r}") from exc
    os.makedirs(args.out, exist_ok=True)
    latent.noise_sweep(model, spec, corpus, weights, rng=Rng(args.seed).spawn(7),
                       which=spec.names[0], out_dir=args.out)
    table = probes.noise_auc_table(model, spec, corpus, weights, seed=args.seed)
    out_csv = os.path.join(args.out, "noise_auc.csv")
    probes.write_noise_table(out_csv, table)
    pretty = ", ".join(f"{w:g}:{auc:.3f}" for w, auc in table)
    print(f"AUC by weight: {pretty} (table: {out_csv})")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "interpolate": _cmd_interpolate,
    "eval-bpd": _cmd_eval_bpd,
    "export-latents": _cmd_export_latents,
    "probe": _cmd_probe,
    "noise-sweep": _cmd_noise_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericsError, FlowError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
