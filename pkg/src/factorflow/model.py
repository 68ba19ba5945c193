"""Multi-scale invertible flow model.

``encode`` maps an image to a list of latents: each scale squeezes 2x2
blocks into channels, applies K flow steps, and (except at the last scale)
factors out half of the channels as that scale's latent.  ``decode`` is the
exact inverse.  Likelihood bookkeeping: with all latents scored under a unit
Gaussian prior,

    nll(x)      = sum_i 0.5 * (D_i * ln(2*pi) + ||z_i||^2) - total_logdet
    bits/dim    = nll / (D * ln 2) + n_bits

where D is the total dimension and the ``+ n_bits`` term accounts for the
quantization bin width of inputs scaled to [-0.5, 0.5].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .layers import FlowStep, split_channels, squeeze, unsplit_channels, unsqueeze
from .rng import Rng

LN2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class FlowConfig:
    """Architecture hyperparameters of the multi-scale flow."""

    n_scales: int = 3
    n_steps: int = 16
    input_shape: tuple = (1, 64, 64)
    hidden_width: int = 32
    n_bits: int = 6
    actnorm: bool = True

    def __post_init__(self):
        c, h, w = self.input_shape
        if self.n_scales < 1:
            raise ConfigError(f"n_scales must be >= 1, got {self.n_scales}")
        if self.n_steps < 0:
            raise ConfigError(f"n_steps must be >= 0, got {self.n_steps}")
        if c < 1 or h < 1 or w < 1:
            raise ConfigError(f"invalid input shape {self.input_shape}")
        div = 2 ** self.n_scales
        if h % div or w % div:
            raise ConfigError(f"input {h}x{w} not divisible by 2^{self.n_scales}")
        if not 1 <= self.n_bits <= 8:
            raise ConfigError(f"n_bits must be in [1, 8], got {self.n_bits}")

    @property
    def latent_shapes(self) -> list:
        """Shapes of z_1 .. z_L (intermediates then final)."""
        c, h, w = self.input_shape
        shapes = []
        for i in range(1, self.n_scales):
            shapes.append((c * 2 ** i, h // 2 ** i, w // 2 ** i))
        ll = self.n_scales
        shapes.append((c * 4 ** ll // 2 ** (ll - 1), h // 2 ** ll, w // 2 ** ll))
        return shapes

    @property
    def final_latent_shape(self) -> tuple:
        return self.latent_shapes[-1]

    @property
    def total_dims(self) -> int:
        c, h, w = self.input_shape
        return c * h * w


@dataclass
class LatentBundle:
    """Latents z_1..z_L plus the per-scale log-determinant contributions.

    All members are batched Tensors; ``scale_logdets[i]`` is a [B] Tensor
    holding the encode-direction logdet accumulated inside scale i+1.
    """

    zs: list = field(default_factory=list)
    scale_logdets: list = field(default_factory=list)

    @property
    def final(self) -> Tensor:
        return self.zs[-1]

    @property
    def intermediates(self) -> list:
        return self.zs[:-1]

    @property
    def total_logdet(self) -> Tensor:
        out = self.scale_logdets[0]
        for ld in self.scale_logdets[1:]:
            out = ad.add(out, ld)
        return out

    @property
    def batch_size(self) -> int:
        return self.zs[-1].shape[0]

    def arrays(self) -> list:
        return [z.data for z in self.zs]

    def dims(self) -> int:
        """Per-sample latent dimension count (bijectivity bookkeeping)."""
        return sum(int(np.prod(z.shape[1:])) for z in self.zs)


class GlowModel:
    """L scales of (squeeze -> K flow steps -> split), fully invertible."""

    def __init__(self, config: FlowConfig, rng: Rng):
        self.config = config
        self.scales = []
        c = config.input_shape[0]
        for i in range(config.n_scales):
            c *= 4
            steps = [FlowStep(c, config.hidden_width, rng, config.actnorm)
                     for _ in range(config.n_steps)]
            self.scales.append(steps)
            if i < config.n_scales - 1:
                c //= 2

    # -- parameters ---------------------------------------------------------
    def parameters(self) -> list:
        """(name, Tensor) pairs in canonical (construction) order."""
        out = []
        for i, steps in enumerate(self.scales):
            for k, step in enumerate(steps):
                for name, p in step.parameters():
                    out.append((f"scale{i}.step{k}.{name}", p))
        return out

    def parameter_tensors(self) -> list:
        return [p for _, p in self.parameters()]

    def buffers(self) -> list:
        """Frozen tensors (permutations, signs) in canonical order."""
        out = []
        for i, steps in enumerate(self.scales):
            for k, step in enumerate(steps):
                for name, p in step.buffers():
                    out.append((f"scale{i}.step{k}.{name}", p))
        return out

    @property
    def actnorm_initialized(self) -> bool:
        if not self.config.actnorm:
            return True
        return all(step.actnorm.initialized for steps in self.scales for step in steps)

    def mark_actnorm_initialized(self) -> None:
        if self.config.actnorm:
            for steps in self.scales:
                for step in steps:
                    step.actnorm.initialized = True

    # -- core transforms ------------------------------------------------------
    def _check_input(self, x: np.ndarray):
        c, h, w = self.config.input_shape
        if x.ndim == 3:
            if x.shape != (c, h, w):
                raise ShapeError(f"expected input {self.config.input_shape}, got {x.shape}")
        elif x.ndim == 4:
            if x.shape[1:] != (c, h, w):
                raise ShapeError(f"expected input [B, {c}, {h}, {w}], got {x.shape}")
        else:
            raise ShapeError(f"expected 3- or 4-d input, got shape {x.shape}")

    def encode(self, x) -> LatentBundle:
        """Image(s) -> LatentBundle. Accepts [C,H,W] or [B,C,H,W]; always batched out."""
        t = x if isinstance(x, Tensor) else Tensor(x)
        self._check_input(t.data)
        if t.ndim == 3:
            t = ad.reshape(t, (1,) + t.shape)
        batch = t.shape[0]
        zero_b = Tensor(np.zeros(batch))
        h = t
        bundle = LatentBundle()
        for i, steps in enumerate(self.scales):
            h = squeeze(h)
            ld = zero_b
            for step in steps:
                h, step_ld = step.forward(h)
                ld = ad.add(ld, step_ld)
            if i < len(self.scales) - 1:
                z, h = split_channels(h)
            else:
                z = h
            bundle.zs.append(z)
            bundle.scale_logdets.append(ld)
        return bundle

    def decode(self, latents) -> np.ndarray:
        """Exact inverse of encode. Accepts a LatentBundle or a list of arrays."""
        zs = latents.arrays() if isinstance(latents, LatentBundle) else list(latents)
        zs = [z.data if isinstance(z, Tensor) else np.asarray(z) for z in zs]
        if len(zs) != self.config.n_scales:
            raise ShapeError(f"expected {self.config.n_scales} latents, got {len(zs)}")
        batched = zs[-1].ndim == 4
        zs = [z if z.ndim == 4 else z[None] for z in zs]
        for z, want in zip(zs, self.config.latent_shapes):
            if z.shape[1:] != want:
                raise ShapeError(f"latent shape {z.shape[1:]} does not match {want}")
        with ad.no_grad():
            h = zs[-1]
            for i in range(self.config.n_scales - 1, -1, -1):
                if i < self.config.n_scales - 1:
                    h = unsplit_channels(zs[i], h).data
                for step in reversed(self.scales[i]):
                    h = step.inverse(h)
                h = unsqueeze(h).data
        return h if batched else h[0]

    # -- likelihood -----------------------------------------------------------
    def nll(self, x) -> np.ndarray:
        """Negative log-likelihood in nats, per sample (scalar for 3-d input).

        The input must already be dequantized and scaled to [-0.5, 0.5].
        """
        single = np.asarray(x.data if isinstance(x, Tensor) else x).ndim == 3
        with ad.no_grad():
            bundle = self.encode(x)
        nats = self._nll_from_bundle(bundle)
        return float(nats[0]) if single else nats

    def _nll_from_bundle(self, bundle: LatentBundle) -> np.ndarray:
        nats = -bundle.total_logdet.data.astype(np.float64).copy()
        for z in bundle.zs:
            d = int(np.prod(z.shape[1:]))
            sq = np.sum(z.data.astype(np.float64) ** 2, axis=(1, 2, 3))
            nats += 0.5 * (d * LN2PI + sq)
        return nats

    def bits_per_dim(self, x) -> np.ndarray:
        """nll / (D * ln 2) + n_bits; per sample (scalar for 3-d input)."""
        nats = self.nll(x)
        d = self.config.total_dims
        return nats / (d * math.log(2.0)) + self.config.n_bits

    # -- sampling ---------------------------------------------------------------
    def sample(self, rng: Rng, temperature: float = 0.7, count: int = 1) -> np.ndarray:
        """Draw latents ~ N(0, T^2 I) and decode; T=0 is the mode path."""
        if temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {temperature}")
        zs = [temperature * rng.normal((count,) + shape)
              for shape in self.config.latent_shapes]
        return self.decode(zs)
