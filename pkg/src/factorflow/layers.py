"""Invertible building blocks of the multi-scale flow.

Each layer exposes ``forward(x) -> (y, logdet)`` and ``inverse(y) -> x``.
``logdet`` is the additive contribution to log|det d(out)/d(in)| in the
encode direction, per sample (a scalar Tensor, or a [B] Tensor when it
depends on the data).  Losses subtract it, so maximizing likelihood pushes
logdet up.  Inverse paths run in plain numpy; they are used for decoding
and never need gradients.

Conventions:
  * activation normalization: y = (x + bias) * exp(log_scale) per channel,
    with data-dependent init to zero mean / unit variance on the first batch;
  * invertible 1x1 convolution parametrized as W = P L (U + diag(sign * exp(log_s)))
    with P and sign frozen at initialization (random rotation, LU-factored);
  * affine coupling: conditioning half ceil(C/2) channels, transformed half
    floor(C/2); scale s = sigmoid(raw + 2), y2 = (x2 + t) * s.  The shifted
    sigmoid keeps scales in (0, 1) and makes the zero-initialized coupling a
    uniform contraction with logdet floor(C/2)*H*W*log(sigmoid(2));
  * squeeze moves 2x2 spatial blocks into channels, split factors out the
    first half of the channels; both are volume preserving (logdet 0).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NumericsError, ShapeError
from .rng import Rng

_VAR_EPS = 1e-8


def _spatial(x_shape) -> tuple[int, int]:
    return int(x_shape[-2]), int(x_shape[-1])


class ActNorm:
    """Per-channel affine layer with data-dependent initialization."""

    def __init__(self, channels: int):
        self.channels = channels
        self.log_scale = Tensor(np.zeros(channels), requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)
        self.initialized = False

    def _init_from(self, x: np.ndarray) -> None:
        axes = (0, 2, 3) if x.ndim == 4 else (1, 2)
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        self.bias.data = (-mean).astype(self.bias.data.dtype)
        self.log_scale.data = (-0.5 * np.log(var + _VAR_EPS)).astype(self.log_scale.data.dtype)
        self.initialized = True

    def forward(self, x: Tensor):
        if not self.initialized:
            self._init_from(x.data)
        h, w = _spatial(x.shape)
        scale = ad.texp(self.log_scale)
        y = ad.mul(ad.add(x, ad.bcast_channel(self.bias, x.shape)),
                   ad.bcast_channel(scale, x.shape))
        logdet = ad.mul(ad.tsum(self.log_scale), float(h * w))
        return y, logdet

    def inverse(self, y: np.ndarray) -> np.ndarray:
        if not self.initialized:
            raise NumericsError("actnorm inverse called before initialization")
        shape = (1,) * (y.ndim - 3) + (self.channels, 1, 1)
        return y * np.exp(-self.log_scale.data).reshape(shape) - self.bias.data.reshape(shape)


class InvConv1x1:
    """Invertible 1x1 convolution with the LU parametrization.

    The permutation P and the signs of the diagonal are frozen; L's strict
    lower triangle, U's strict upper triangle, and log|diag| train.
    """

    def __init__(self, channels: int, rng: Rng):
        self.channels = channels
        q, _ = np.linalg.qr(rng.normal((channels, channels)).astype(np.float64))
        p, lower, upper = scipy.linalg.lu(q)
        s = np.diag(upper)
        self.perm = Tensor(p)
        self.sign_s = Tensor(np.sign(s))
        self.lower = Tensor(np.tril(lower, -1), requires_grad=True)
        self.upper = Tensor(np.triu(upper, 1), requires_grad=True)
        self.log_s = Tensor(np.log(np.abs(s)), requires_grad=True)
        c = channels
        self._mask_low = Tensor(np.tril(np.ones((c, c)), -1))
        self._mask_up = Tensor(np.triu(np.ones((c, c)), 1))
        self._eye = Tensor(np.eye(c))

    def weight(self) -> Tensor:
        lmat = ad.add(ad.mul(self.lower, self._mask_low), self._eye)
        diag = ad.scatter_diag(ad.mul(self.sign_s, ad.texp(self.log_s)))
        umat = ad.add(ad.mul(self.upper, self._mask_up), diag)
        return ad.affine(self.perm, ad.affine(lmat, umat))

    def forward(self, x: Tensor):
        h, w = _spatial(x.shape)
        kernel = ad.reshape(self.weight(), (self.channels, self.channels, 1, 1))
        y = ad.conv2d(x, kernel, None, 0)
        logdet = ad.mul(ad.tsum(self.log_s), float(h * w))
        return y, logdet

    def inverse(self, y: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            w = self.weight().data
        w_inv = np.linalg.inv(w).astype(y.dtype)
        if y.ndim == 4:
            return np.einsum("co,bohw->bchw", w_inv, y)
        return np.einsum("co,ohw->chw", w_inv, y)


class CouplingNet:
    """3x3 -> 1x1 -> 3x3 convolution stack with tanh nonlinearities.

    The final layer starts at zero so a fresh coupling applies a constant
    (sigmoid(2)) scale and no shift.
    """

    def __init__(self, c_in: int, hidden: int, c_out: int, rng: Rng):
        def conv_init(o, c, k):
            std = 1.0 / np.sqrt(c * k * k)
            return Tensor(rng.normal((o, c, k, k)) * std, requires_grad=True)

        self.w1 = conv_init(hidden, c_in, 3)
        self.b1 = Tensor(np.zeros(hidden), requires_grad=True)
        self.w2 = conv_init(hidden, hidden, 1)
        self.b2 = Tensor(np.zeros(hidden), requires_grad=True)
        self.w3 = Tensor(np.zeros((c_out, hidden, 3, 3)), requires_grad=True)
        self.b3 = Tensor(np.zeros(c_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        h = ad.tanh(ad.conv2d(x, self.w1, self.b1))
        h = ad.tanh(ad.conv2d(h, self.w2, self.b2))
        return ad.conv2d(h, self.w3, self.b3)

    def parameters(self):
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2),
                ("b2", self.b2), ("w3", self.w3), ("b3", self.b3)]


class AffineCoupling:
    """Affine coupling over a channel split; conditioner is a CouplingNet."""

    def __init__(self, channels: int, hidden: int, rng: Rng):
        if channels < 2:
            raise ShapeError(f"affine coupling needs at least 2 channels, got {channels}")
        self.channels = channels
        self.c_cond = (channels + 1) // 2
        self.c_trans = channels // 2
        self.net = CouplingNet(self.c_cond, hidden, 2 * self.c_trans, rng)

    def _scale_shift(self, x1: Tensor):
        h = self.net(x1)
        raw = ad.narrow(h, -3, 0, self.c_trans)
        shift = ad.narrow(h, -3, self.c_trans, self.c_trans)
        scale = ad.sigmoid(ad.add(raw, 2.0))
        return scale, shift

    def forward(self, x: Tensor):
        x1 = ad.narrow(x, -3, 0, self.c_cond)
        x2 = ad.narrow(x, -3, self.c_cond, self.c_trans)
        scale, shift = self._scale_shift(x1)
        y2 = ad.mul(ad.add(x2, shift), scale)
        y = ad.concat([x1, y2], -3)
        sum_axes = (1, 2, 3) if x.ndim == 4 else None
        logdet = ad.tsum(ad.tlog(scale), sum_axes)
        return y, logdet

    def inverse(self, y: np.ndarray) -> np.ndarray:
        ax = y.ndim - 3
        y1 = np.take(y, range(self.c_cond), axis=ax)
        y2 = np.take(y, range(self.c_cond, self.channels), axis=ax)
        with ad.no_grad():
            scale, shift = self._scale_shift(Tensor(y1))
        x2 = y2 / scale.data - shift.data
        return np.concatenate([y1, x2], axis=ax)


class FlowStep:
    """One step of flow: actnorm -> invertible 1x1 conv -> affine coupling."""

    def __init__(self, channels: int, hidden: int, rng: Rng, use_actnorm: bool = True):
        self.actnorm = ActNorm(channels) if use_actnorm else None
        self.invconv = InvConv1x1(channels, rng)
        self.coupling = AffineCoupling(channels, hidden, rng)

    def forward(self, x: Tensor):
        logdet = None
        if self.actnorm is not None:
            x, ld = self.actnorm.forward(x)
            logdet = ld
        x, ld = self.invconv.forward(x)
        logdet = ld if logdet is None else ad.add(logdet, ld)
        x, ld = self.coupling.forward(x)
        logdet = ad.add(logdet, ld)
        return x, logdet

    def inverse(self, y: np.ndarray) -> np.ndarray:
        y = self.coupling.inverse(y)
        y = self.invconv.inverse(y)
        if self.actnorm is not None:
            y = self.actnorm.inverse(y)
        return y

    def parameters(self):
        out = []
        if self.actnorm is not None:
            out += [("actnorm.bias", self.actnorm.bias),
                    ("actnorm.log_scale", self.actnorm.log_scale)]
        out += [("invconv.lower", self.invconv.lower),
                ("invconv.upper", self.invconv.upper),
                ("invconv.log_s", self.invconv.log_s)]
        out += [(f"coupling.{n}", p) for n, p in self.net_parameters()]
        return out

    def buffers(self):
        """Frozen non-trainable state that still defines the transform."""
        return [("invconv.perm", self.invconv.perm),
                ("invconv.sign_s", self.invconv.sign_s)]

    def net_parameters(self):
        return self.coupling.net.parameters()


def squeeze(x):
    """[..., C, H, W] -> [..., 4C, H/2, W/2]; volume preserving."""
    return ad.space_to_channel(x if isinstance(x, Tensor) else Tensor(x))


def unsqueeze(x):
    return ad.channel_to_space(x if isinstance(x, Tensor) else Tensor(x))


def split_channels(h: Tensor):
    """First half of the channels factors out; second half continues."""
    c = h.shape[-3]
    if c % 2:
        raise ShapeError(f"split needs an even channel count, got {c}")
    z = ad.narrow(h, -3, 0, c // 2)
    rest = ad.narrow(h, -3, c // 2, c // 2)
    return z, rest


def unsplit_channels(z, rest):
    z = z if isinstance(z, Tensor) else Tensor(z)
    rest = rest if isinstance(rest, Tensor) else Tensor(rest)
    return ad.concat([z, rest], -3)
