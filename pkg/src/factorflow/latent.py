"""Latent-space tooling: factor interpolation, full interpolation, latent
export, and the input-noise robustness sweep.

Analysis paths need a deterministic encode, so 8-bit images are placed at
their quantization-bin centers (no dequantization noise) before encoding.
Factor interpolation modifies only the selected channel slice of the final
latent; every other coordinate (other factors and all intermediate latents)
stays bit-identical to the first seed's encoding.

Latent tables are CSV with header ``filename,anomaly,slice_index,z_0,...``;
values are written with shortest round-trip float formatting, so reading a
table back reproduces the encoded values exactly.
"""

from __future__ import annotations

import os

import numpy as np

from . import autodiff as ad
from .data import Corpus, dequantize_center
from .errors import ConfigError, DataError
from .model import GlowModel
from .objective import FactorSpec, factorize
from .rng import Rng


def encode_for_analysis(model: GlowModel, images: np.ndarray):
    """Deterministic (bin-center) encode of 8-bit images; returns a bundle."""
    x = dequantize_center(images, model.config.n_bits)
    with ad.no_grad():
        return model.encode(x)


def _factor_index(spec: FactorSpec, factor) -> int:
    if isinstance(factor, str):
        return spec.index_of(factor)
    idx = int(factor)
    if not 0 <= idx < spec.n_factors:
        raise ConfigError(f"factor index {idx} outside [0, {spec.n_factors - 1}]")
    return idx


def interpolate_factor(model: GlowModel, spec: FactorSpec, image_a: np.ndarray,
                       image_b: np.ndarray, factor, steps: int = 8) -> np.ndarray:
    """Decode a sequence replacing one factor of seed 1 by a blend with seed 2.

    Returns decoded images [steps, C, H, W] in the model domain; lambda runs
    0 .. 1 inclusive, so the first frame is seed 1's reconstruction.
    """
    if steps < 2:
        raise ConfigError(f"need at least 2 interpolation steps, got {steps}")
    m = _factor_index(spec, factor)
    bundle_a = encode_for_analysis(model, np.asarray(image_a)[None]
                                   if np.asarray(image_a).ndim == 3 else image_a)
    bundle_b = encode_for_analysis(model, np.asarray(image_b)[None]
                                   if np.asarray(image_b).ndim == 3 else image_b)
    za = bundle_a.final.data
    zb = bundle_b.final.data
    lo, width = spec.offsets()[m]
    out = []
    for lam in np.linspace(0.0, 1.0, steps):
        z = za.copy()
        z[:, lo:lo + width] = (1.0 - lam) * za[:, lo:lo + width] \
            + lam * zb[:, lo:lo + width]
        zs = [t.data for t in bundle_a.intermediates] + [z]
        out.append(model.decode(zs)[0])
    return np.stack(out)


def interpolate_full(model: GlowModel, image_a: np.ndarray, image_b: np.ndarray,
                     steps: int = 8) -> np.ndarray:
    """Linear interpolation of all latents; endpoints are the reconstructions."""
    if steps < 2:
        raise ConfigError(f"need at least 2 interpolation steps, got {steps}")
    bundle_a = encode_for_analysis(model, np.asarray(image_a)[None]
                                   if np.asarray(image_a).ndim == 3 else image_a)
    bundle_b = encode_for_analysis(model, np.asarray(image_b)[None]
                                   if np.asarray(image_b).ndim == 3 else image_b)
    za = [t.data for t in bundle_a.zs]
    zb = [t.data for t in bundle_b.zs]
    out = []
    for lam in np.linspace(0.0, 1.0, steps):
        zs = [(1.0 - lam) * a + lam * b for a, b in zip(za, zb)]
        out.append(model.decode(zs)[0])
    return np.stack(out)


def latent_features(model: GlowModel, spec: FactorSpec, corpus: Corpus,
                    which="full", batch_size: int = 256) -> np.ndarray:
    """Flattened final-latent features [N, d]; ``which`` is 'full' or a factor."""
    feats = []
    for lo in range(0, len(corpus), batch_size):
        bundle = encode_for_analysis(model, corpus.images[lo:lo + batch_size])
        z = bundle.final
        if which != "full":
            z = factorize(z, spec)[_factor_index(spec, which)]
        feats.append(z.data.reshape(z.shape[0], -1).copy())
    return np.concatenate(feats)


def export_latents(model: GlowModel, spec: FactorSpec, corpus: Corpus,
                   which="full", path=None) -> np.ndarray:
    """Write one row per image: filename, labels, flattened latent values."""
    feats = latent_features(model, spec, corpus, which)
    if path is not None:
        write_latent_table(path, corpus, feats)
    return feats


def write_latent_table(path, corpus: Corpus, feats: np.ndarray) -> None:
    names = corpus.filenames or [f"img_{i:05d}.pgm" for i in range(len(corpus))]
    d = feats.shape[1]
    header = "filename,anomaly,slice_index," + ",".join(f"z_{j}" for j in range(d))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for name, a, t, row in zip(names, corpus.anomaly, corpus.slice_index, feats):
            cells = ",".join(repr(float(v)) for v in row)
            fh.write(f"{name},{int(a)},{float(t)!r},{cells}\n")


def read_latent_table(path):
    """Returns (filenames, anomaly, slice_index, features)."""
    try:
        with open(path) as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    except OSError as exc:
        raise DataError(f"cannot read latent table {path}: {exc}") from exc
    if not lines or not lines[0].startswith("filename,anomaly,slice_index,"):
        raise DataError(f"{path}: not a latent table (bad header)")
    names, anomaly, slices, rows = [], [], [], []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) < 4:
            raise DataError(f"{path}: malformed row {ln!r}")
        names.append(cells[0])
        anomaly.append(int(cells[1]))
        slices.append(float(cells[2]))
        rows.append([float(c) for c in cells[3:]])
    return (names, np.asarray(anomaly), np.asarray(slices, dtype=np.float64),
            np.asarray(rows, dtype=np.float64))


def noisy_inputs(corpus: Corpus, weight: float, n_bits: int, rng: Rng) -> np.ndarray:
    """Bin-center inputs plus weight * N(0, I), clipped to [-0.5, 0.5]."""
    x = dequantize_center(corpus.images, n_bits).astype(np.float64)
    if weight > 0:
        x = x + weight * rng.normal(x.shape).astype(np.float64)
    from . import precision
    return np.clip(x, -0.5, 0.5).astype(precision.dtype())


def noise_sweep(model: GlowModel, spec: FactorSpec, corpus: Corpus,
                weights=(0.0, 0.05, 0.1, 0.2, 0.3), rng: Rng | None = None,
                which="full", out_dir=None) -> dict:
    """Per-weight latent exports of noise-perturbed inputs.

    Returns {weight: features}; with ``out_dir`` each table is also written
    to ``latents_noise_<weight>.csv``.  The noise draw for each weight comes
    from a child stream of ``rng``, so sweeps are seed-deterministic.
    """
    if rng is None:
        rng = Rng(0)
    out = {}
    for i, w in enumerate(weights):
        if w < 0:
            raise ConfigError(f"noise weight must be >= 0, got {w}")
        x = noisy_inputs(corpus, float(w), model.config.n_bits, rng.spawn(i))
        with ad.no_grad():
            feats = []
            for lo in range(0, len(corpus), 256):
                bundle = model.encode(x[lo:lo + 256])
                z = bundle.final
                if which != "full":
                    z = factorize(z, spec)[_factor_index(spec, which)]
                feats.append(z.data.reshape(z.shape[0], -1).copy())
        feats = np.concatenate(feats)
        out[float(w)] = feats
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            write_latent_table(os.path.join(out_dir, f"latents_noise_{w:g}.csv"),
                               corpus, feats)
    return out
