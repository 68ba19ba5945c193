import math

import numpy as np
import pytest

from factorflow import autodiff as ad
from factorflow.autodiff import Tensor
from factorflow.errors import NumericsError, ShapeError
from factorflow.layers import (ActNorm, AffineCoupling, FlowStep, InvConv1x1,
                               split_channels, squeeze, unsplit_channels, unsqueeze)
from factorflow.rng import Rng

from oracles import numerical_logdet


def randomized_coupling(channels, hidden, rng):
    cp = AffineCoupling(channels, hidden, rng)
    cp.net.w3.data = rng.normal(cp.net.w3.shape) * 0.3
    cp.net.b3.data = rng.normal(cp.net.b3.shape) * 0.1
    return cp


# -- actnorm -----------------------------------------------------------------

def test_actnorm_identity_params():
    an = ActNorm(2)
    an.initialized = True
    x = Tensor(Rng(0).normal((2, 3, 3)))
    y, ld = an.forward(x)
    assert np.array_equal(y.data, x.data)
    assert float(ld.data) == 0.0


def test_actnorm_analytic_logdet():
    an = ActNorm(1)
    an.initialized = True
    an.log_scale.data[:] = math.log(2.0)
    _, ld = an.forward(Tensor(Rng(1).normal((1, 2, 2))))
    assert np.isclose(float(ld.data), 4.0 * math.log(2.0))


def test_actnorm_data_init_statistics():
    an = ActNorm(3)
    x = Tensor(Rng(2).normal((16, 3, 4, 4)) * 2.5 + 1.0)
    y, _ = an.forward(x)
    assert an.initialized
    assert np.abs(y.data.mean(axis=(0, 2, 3))).max() < 1e-3
    assert np.abs(y.data.var(axis=(0, 2, 3)) - 1.0).max() < 1e-3


def test_actnorm_roundtrip():
    an = ActNorm(4)
    x = Tensor(Rng(3).normal((4, 4, 2, 2)))
    y, _ = an.forward(x)
    assert np.abs(an.inverse(y.data) - x.data).max() < 1e-10


def test_actnorm_inverse_before_init_errors():
    with pytest.raises(NumericsError):
        ActNorm(2).inverse(np.zeros((2, 2, 2)))


# -- invertible 1x1 conv --------------------------------------------------------

def test_invconv_identity_weight():
    ic = InvConv1x1(3, Rng(4))
    ic.perm.data = np.eye(3)
    ic.lower.data[:] = 0.0
    ic.upper.data[:] = 0.0
    ic.sign_s.data = np.ones(3)
    ic.log_s.data[:] = 0.0
    x = Tensor(Rng(5).normal((3, 4, 4)))
    y, ld = ic.forward(x)
    assert np.allclose(y.data, x.data)
    assert float(ld.data) == 0.0


def test_invconv_diagonal_logdet_matches_jacobian():
    ic = InvConv1x1(2, Rng(6))
    ic.perm.data = np.eye(2)
    ic.lower.data[:] = 0.0
    ic.upper.data[:] = 0.0
    ic.sign_s.data = np.ones(2)
    ic.log_s.data = np.log(np.array([2.0, 3.0]))
    x = Rng(7).normal((2, 4, 4))
    _, ld = ic.forward(Tensor(x))
    assert np.isclose(float(ld.data), 16.0 * math.log(6.0))

    def fwd(a):
        with ad.no_grad():
            return ic.forward(Tensor(a))[0].data

    num = numerical_logdet(fwd, x)
    assert abs(float(ld.data) - num) / abs(num) < 1e-6


def test_invconv_random_init_logdet_and_roundtrip():
    ic = InvConv1x1(2, Rng(8))
    x = Rng(9).normal((2, 3, 3))
    y, ld = ic.forward(Tensor(x))
    assert np.abs(ic.inverse(y.data) - x).max() < 1e-10

    def fwd(a):
        with ad.no_grad():
            return ic.forward(Tensor(a))[0].data

    num = numerical_logdet(fwd, x)
    assert abs(float(ld.data) - num) <= 1e-5 * max(1.0, abs(num))


def test_invconv_weight_reconstruction_is_rotation_at_init():
    ic = InvConv1x1(5, Rng(10))
    w = ic.weight().data
    assert np.abs(w @ w.T - np.eye(5)).max() < 1e-10


def test_invconv_logdet_formula_after_parameter_change():
    ic = InvConv1x1(3, Rng(11))
    ic.log_s.data = ic.log_s.data + 0.3
    x = Rng(12).normal((3, 2, 2))
    _, ld = ic.forward(Tensor(x))
    assert np.isclose(float(ld.data), 4.0 * float(ic.log_s.data.sum()))


# -- affine coupling ----------------------------------------------------------------

def test_coupling_needs_two_channels():
    with pytest.raises(ShapeError):
        AffineCoupling(1, 8, Rng(0))


def test_coupling_zero_init_constant_logdet():
    cp = AffineCoupling(4, 8, Rng(13))
    x = Tensor(Rng(14).normal((4, 2, 2)))
    y, ld = cp.forward(x)
    s = 1.0 / (1.0 + math.exp(-2.0))
    assert np.isclose(float(ld.data), 2 * 2 * 2 * math.log(s))
    # conditioning half passes through unchanged
    assert np.array_equal(y.data[:2], x.data[:2])
    assert np.allclose(y.data[2:], x.data[2:] * s)


def test_coupling_roundtrip_random_params():
    cp = randomized_coupling(4, 8, Rng(15))
    x = Tensor(Rng(16).normal((4, 3, 3)))
    y, _ = cp.forward(x)
    assert np.abs(cp.inverse(y.data) - x.data).max() < 1e-8


def test_coupling_logdet_matches_numerical_jacobian():
    cp = randomized_coupling(4, 8, Rng(17))
    x = Rng(18).normal((4, 2, 2))
    _, ld = cp.forward(Tensor(x))

    def fwd(a):
        with ad.no_grad():
            return cp.forward(Tensor(a))[0].data

    num = numerical_logdet(fwd, x)
    assert abs(float(ld.data) - num) / abs(num) < 1e-4


def test_coupling_odd_channels_split_convention():
    cp = AffineCoupling(5, 8, Rng(19))
    assert cp.c_cond == 3 and cp.c_trans == 2
    x = Tensor(Rng(20).normal((5, 2, 2)))
    y, _ = cp.forward(x)
    assert np.array_equal(y.data[:3], x.data[:3])
    assert np.abs(cp.inverse(y.data) - x.data).max() < 1e-8


def test_coupling_batched_logdet_per_sample():
    cp = randomized_coupling(4, 8, Rng(21))
    x = Tensor(Rng(22).normal((5, 4, 2, 2)))
    _, ld = cp.forward(x)
    assert ld.shape == (5,)
    # each sample's logdet equals its own unbatched value
    for i in range(5):
        _, ldi = cp.forward(Tensor(x.data[i]))
        assert np.isclose(float(ldi.data), ld.data[i])


# -- squeeze / split ------------------------------------------------------------------

def test_squeeze_shapes_and_bitwise_roundtrip():
    x = Rng(23).normal((1, 4, 4))
    y = squeeze(Tensor(x))
    assert y.shape == (4, 2, 2)
    assert np.array_equal(unsqueeze(y).data, x)


def test_squeeze_rejects_odd():
    with pytest.raises(ShapeError):
        squeeze(Tensor(np.zeros((1, 5, 4))))


def test_split_shapes_conservation_and_roundtrip():
    h = Tensor(Rng(24).normal((4, 32, 32)))
    z, rest = split_channels(h)
    assert z.shape == (2, 32, 32) and rest.shape == (2, 32, 32)
    assert z.size + rest.size == h.size
    assert np.array_equal(unsplit_channels(z, rest).data, h.data)


def test_split_rejects_odd_channels():
    with pytest.raises(ShapeError):
        split_channels(Tensor(np.zeros((3, 2, 2))))


def test_volume_preserving_ops_contribute_zero_logdet():
    # squeeze/split are pure data movement: numerical logdet must be 0
    x = Rng(25).normal((1, 4, 4))

    def fwd(a):
        return squeeze(Tensor(a)).data

    assert abs(numerical_logdet(fwd, x)) < 1e-8


# -- composition ---------------------------------------------------------------------

def test_flow_step_roundtrip_and_logdet_sum():
    rng = Rng(26)
    step = FlowStep(4, 8, rng)
    x = Tensor(rng.normal((4, 4, 4)))
    y, ld = step.forward(x)  # also initializes actnorm from x
    assert np.abs(step.inverse(y.data) - x.data).max() < 1e-8

    # composition logdet equals the sum of the parts
    a, ld1 = step.actnorm.forward(x)
    b, ld2 = step.invconv.forward(a)
    c, ld3 = step.coupling.forward(b)
    assert np.allclose(y.data, c.data)
    assert np.isclose(float(ld.data),
                      float(ld1.data) + float(ld2.data) + float(ld3.data))


def test_stack_of_steps_logdet_matches_numerical_jacobian():
    rng = Rng(27)
    steps = [FlowStep(4, 8, rng) for _ in range(2)]
    x0 = Rng(28).normal((4, 2, 2))
    with ad.no_grad():  # chain once so every actnorm initializes, then freeze
        h = Tensor(x0)
        for s in steps:
            h, _ = s.forward(h)

    def fwd(a):
        with ad.no_grad():
            h = Tensor(a)
            for s in steps:
                h, _ = s.forward(h)
            return h.data

    h = Tensor(x0)
    total = 0.0
    for s in steps:
        h, ld = s.forward(h)
        total += float(ld.data)
    num = numerical_logdet(fwd, x0)
    assert abs(total - num) / max(1.0, abs(num)) < 1e-4
