"""Channel factorization of the final latent and the paired-sample losses.

The final latent z_L [C, H, W] is cut into M+1 contiguous channel slices
(factors); the last factor is the residual.  For an image pair that shares
factor F, the pair objective is

    factor_loss = sum_k ||z_a^k||^2 - logdet_L(a)
                + sum_{k != F} ||z_b^k||^2 - logdet_L(b)
                + ||z_b^F - sigma * z_a^F||^2 / (1 - sigma^2)

i.e. the shared factor of image b is scored against a Gaussian centered at
sigma * z_a^F with variance (1 - sigma^2), every other factor against a unit
Gaussian.  The norm runs over all channel and spatial entries of a factor;
logdet terms enter with a minus sign so the value is a loss to minimize.
As printed above the norms carry no 0.5 and no log(2*pi) constants; passing
``include_constants=True`` adds them (and the correlated-Gaussian
normalizer) to make the value the exact pair negative log-density for
likelihood-consistent reporting.  The constants are flat in the parameters,
so gradients are unchanged up to the global 0.5.

The per-scale loss (intermediate latents) always carries its constants:

    scale_loss = sum_{i<L} 0.5 * (D_i * ln(2*pi) + ||z_i||^2) - logdet_i

with the ln(2*pi) counted per dimension.  The total pair loss is
scale_loss(a) + scale_loss(b) + factor_loss(a, b; F).  All losses are
means over the batch dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .model import LN2PI, GlowModel, LatentBundle


@dataclass(frozen=True)
class FactorSpec:
    """Channel partition of z_L into M semantic factors plus one residual."""

    widths: tuple
    sigma_ab: float = 0.85
    names: tuple = ()
    sigmas: tuple = ()  # optional per-factor correlation override

    def __post_init__(self):
        if len(self.widths) < 1 or any(int(w) < 1 for w in self.widths):
            raise ConfigError(f"factor widths must be positive, got {self.widths}")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        names = self.names
        if not names:
            names = tuple(f"factor{m}" for m in range(len(self.widths) - 1)) + ("residual",)
        if len(names) != len(self.widths):
            raise ConfigError(f"{len(names)} names for {len(self.widths)} factors")
        object.__setattr__(self, "names", tuple(names))
        sigmas = self.sigmas or (self.sigma_ab,) * len(self.widths)
        if len(sigmas) != len(self.widths):
            raise ConfigError(f"{len(sigmas)} sigmas for {len(self.widths)} factors")
        for s in tuple(sigmas) + (self.sigma_ab,):
            if not 0.0 < float(s) < 1.0:
                raise ConfigError(f"correlation coefficient must lie in (0, 1), got {s}")
        object.__setattr__(self, "sigmas", tuple(float(s) for s in sigmas))

    @property
    def n_factors(self) -> int:
        """M+1, counting the residual."""
        return len(self.widths)

    @property
    def channels(self) -> int:
        return sum(self.widths)

    def offsets(self) -> list:
        out, acc = [], 0
        for w in self.widths:
            out.append((acc, w))
            acc += w
        return out

    def index_of(self, name: str) -> int:
        if name not in self.names:
            raise ConfigError(f"unknown factor {name!r}; have {self.names}")
        return self.names.index(name)

    def sigma_for(self, m: int) -> float:
        return self.sigmas[m]


def factorize(z, spec: FactorSpec) -> list:
    """Slice z_L into the declared factors along the channel axis.

    Concatenating the outputs along channels reproduces z exactly.
    """
    t = z if isinstance(z, Tensor) else Tensor(z)
    c = t.shape[-3]
    if c != spec.channels:
        raise ShapeError(f"factor widths sum to {spec.channels} but z has {c} channels")
    return [ad.narrow(t, -3, lo, w) for lo, w in spec.offsets()]


def _per_sample_sumsq(t: Tensor) -> Tensor:
    axes = tuple(range(1, t.ndim)) if t.ndim > 1 else None
    return ad.tsum(ad.square(t), axes)


def _check_bundle(bundle: LatentBundle, spec: FactorSpec):
    if bundle.final.shape[-3] != spec.channels:
        raise ShapeError(f"bundle final latent has {bundle.final.shape[-3]} channels, "
                         f"spec expects {spec.channels}")


def factor_loss(bundle_a: LatentBundle, bundle_b: LatentBundle, factor_index: int,
                spec: FactorSpec, include_constants: bool = False) -> Tensor:
    """Paired negative log-likelihood of the final scale (batch mean)."""
    if not 0 <= factor_index < spec.n_factors:
        raise ConfigError(f"factor index {factor_index} outside [0, {spec.n_factors - 1}]")
    _check_bundle(bundle_a, spec)
    _check_bundle(bundle_b, spec)
    sigma = spec.sigma_for(factor_index)

    parts_a = factorize(bundle_a.final, spec)
    parts_b = factorize(bundle_b.final, spec)

    loss = None
    for part in parts_a:
        term = _per_sample_sumsq(part)
        loss = term if loss is None else ad.add(loss, term)
    for m, part in enumerate(parts_b):
        if m == factor_index:
            continue
        loss = ad.add(loss, _per_sample_sumsq(part))
    corr = ad.sub(parts_b[factor_index], ad.mul(parts_a[factor_index], sigma))
    loss = ad.add(loss, ad.div(_per_sample_sumsq(corr), 1.0 - sigma * sigma))
    if include_constants:
        h, w = bundle_a.final.shape[-2], bundle_a.final.shape[-1]
        d_total = spec.channels * h * w
        d_f = spec.widths[factor_index] * h * w
        const = (d_total * LN2PI                       # image a, all factors
                 + (d_total - d_f) * LN2PI             # image b, uncorrelated factors
                 + d_f * (LN2PI + math.log(1.0 - sigma * sigma)))
        loss = ad.mul(ad.add(loss, const), 0.5)
        loss = ad.sub(loss, ad.add(bundle_a.scale_logdets[-1], bundle_b.scale_logdets[-1]))
    else:
        loss = ad.sub(loss, ad.add(bundle_a.scale_logdets[-1], bundle_b.scale_logdets[-1]))
    return ad.tmean(loss)


def scale_loss(bundle: LatentBundle) -> Tensor:
    """Negative log-likelihood of the intermediate scales (batch mean).

    Empty sum (zero) for a single-scale model.
    """
    batch = bundle.batch_size
    total = Tensor(np.zeros(batch))
    for z, ld in zip(bundle.intermediates, bundle.scale_logdets[:-1]):
        d = int(np.prod(z.shape[1:]))
        nats = ad.mul(ad.add(_per_sample_sumsq(z), float(d) * LN2PI), 0.5)
        total = ad.add(total, ad.sub(nats, ld))
    return ad.tmean(total)


@dataclass
class PairLossBreakdown:
    """Scalar pieces of the pair objective plus the differentiable node.

    ``total`` is defined as the exact float sum l_s_a + l_s_b + l_F; ``node``
    is the Tensor to differentiate (same value up to dtype rounding).
    """

    l_s_a: float
    l_s_b: float
    l_F: float
    total: float
    factor_index: int
    factor_sumsq_a: tuple = ()
    factor_sumsq_b: tuple = ()
    node: Tensor = None

    @classmethod
    def build(cls, lsa: Tensor, lsb: Tensor, lf: Tensor, factor_index: int,
              sq_a=(), sq_b=()):
        node = ad.add(ad.add(lsa, lsb), lf)
        a, b, f = float(lsa.data), float(lsb.data), float(lf.data)
        return cls(l_s_a=a, l_s_b=b, l_F=f, total=a + b + f,
                   factor_index=factor_index, factor_sumsq_a=tuple(sq_a),
                   factor_sumsq_b=tuple(sq_b), node=node)


def pair_loss(x_a, x_b, factor_index: int, model: GlowModel, spec: FactorSpec,
              include_constants: bool = False) -> PairLossBreakdown:
    """Total loss for a pair sharing ``factor_index``; differentiable.

    Both sides are encoded as one stacked batch (row-independent ops make
    this numerically identical to two encodes) and the per-sample loss
    vectors are split afterwards.
    """
    if not 0 <= factor_index < spec.n_factors:
        raise ConfigError(f"factor index {factor_index} outside [0, {spec.n_factors - 1}]")
    a = np.asarray(x_a.data if isinstance(x_a, Tensor) else x_a)
    b = np.asarray(x_b.data if isinstance(x_b, Tensor) else x_b)
    if a.ndim == 3:
        a = a[None]
    if b.ndim == 3:
        b = b[None]
    if a.shape != b.shape:
        raise ShapeError(f"pair sides differ in shape: {a.shape} vs {b.shape}")
    n = a.shape[0]
    bundle = model.encode(np.concatenate([a, b]))
    _check_bundle(bundle, spec)
    sigma = spec.sigma_for(factor_index)

    sv = Tensor(np.zeros(2 * n))
    for z, ld in zip(bundle.intermediates, bundle.scale_logdets[:-1]):
        d = int(np.prod(z.shape[1:]))
        nats = ad.mul(ad.add(_per_sample_sumsq(z), float(d) * LN2PI), 0.5)
        sv = ad.add(sv, ad.sub(nats, ld))
    lsa = ad.tmean(ad.narrow(sv, 0, 0, n))
    lsb = ad.tmean(ad.narrow(sv, 0, n, n))

    parts = factorize(bundle.final, spec)
    sums = [_per_sample_sumsq(p) for p in parts]
    lf = None
    for s in sums:
        term = ad.narrow(s, 0, 0, n)
        lf = term if lf is None else ad.add(lf, term)
    for m, s in enumerate(sums):
        if m != factor_index:
            lf = ad.add(lf, ad.narrow(s, 0, n, n))
    z_f = parts[factor_index]
    corr = ad.sub(ad.narrow(z_f, 0, n, n), ad.mul(ad.narrow(z_f, 0, 0, n), sigma))
    lf = ad.add(lf, ad.div(_per_sample_sumsq(corr), 1.0 - sigma * sigma))
    if include_constants:
        h, w = bundle.final.shape[-2], bundle.final.shape[-1]
        d_total = spec.channels * h * w
        d_f = spec.widths[factor_index] * h * w
        const = (d_total * LN2PI + (d_total - d_f) * LN2PI
                 + d_f * (LN2PI + math.log(1.0 - sigma * sigma)))
        lf = ad.mul(ad.add(lf, const), 0.5)
    ld_l = bundle.scale_logdets[-1]
    lf = ad.sub(lf, ad.add(ad.narrow(ld_l, 0, 0, n), ad.narrow(ld_l, 0, n, n)))
    lf = ad.tmean(lf)

    sq_a = [float(np.mean(s.data[:n].astype(np.float64))) for s in sums]
    sq_b = [float(np.mean(s.data[n:].astype(np.float64))) for s in sums]
    return PairLossBreakdown.build(lsa, lsb, lf, factor_index, sq_a, sq_b)


def pair_loss_from_bundles(bundle_a: LatentBundle, bundle_b: LatentBundle,
                           factor_index: int, spec: FactorSpec,
                           include_constants: bool = False) -> PairLossBreakdown:
    lsa = scale_loss(bundle_a)
    lsb = scale_loss(bundle_b)
    lf = factor_loss(bundle_a, bundle_b, factor_index, spec, include_constants)
    sq_a = [float(np.mean(np.sum(p.data.astype(np.float64) ** 2, axis=(1, 2, 3))))
            for p in factorize(bundle_a.final, spec)]
    sq_b = [float(np.mean(np.sum(p.data.astype(np.float64) ** 2, axis=(1, 2, 3))))
            for p in factorize(bundle_b.final, spec)]
    return PairLossBreakdown.build(lsa, lsb, lf, factor_index, sq_a, sq_b)
