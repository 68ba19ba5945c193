import numpy as np
import pytest

from factorflow.errors import ConfigError
from factorflow.rng import Rng


def test_same_seed_identical_streams():
    a = Rng(123).normal((64,))
    b = Rng(123).normal((64,))
    assert np.array_equal(a, b)
    u1 = Rng(9).uniform((100,), -1, 1)
    u2 = Rng(9).uniform((100,), -1, 1)
    assert np.array_equal(u1, u2)


def test_different_seeds_differ():
    assert not np.array_equal(Rng(1).normal((32,)), Rng(2).normal((32,)))


def test_normal_law_of_large_numbers():
    z = Rng(77).normal((100_000,))
    assert abs(z.mean()) < 0.02
    assert abs(z.std() - 1.0) < 0.02


def test_uniform_range_strict():
    u = Rng(4).uniform((50_000,), 0.0, 1.0 / 64.0)
    assert u.min() >= 0.0
    assert u.max() < 1.0 / 64.0


def test_uniform_bad_bounds():
    with pytest.raises(ConfigError):
        Rng(0).uniform((3,), 1.0, 1.0)


def test_integers_range_and_determinism():
    k = Rng(5).integers(2, 9, (10_000,))
    assert k.min() >= 2 and k.max() <= 8
    assert set(np.unique(k)) == set(range(2, 9))
    assert np.array_equal(k, Rng(5).integers(2, 9, (10_000,)))


def test_state_snapshot_resumes_stream():
    r = Rng(42)
    r.normal((10,))
    state = r.state()
    rest = r.normal((10,))
    r2 = Rng(42)
    r2.set_state(state)
    assert np.array_equal(r2.normal((10,)), rest)


def test_spawn_streams_independent_and_deterministic():
    a = Rng(1).spawn(3).normal((16,))
    b = Rng(1).spawn(3).normal((16,))
    c = Rng(1).spawn(4).normal((16,))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_shuffle_is_a_permutation():
    perm = Rng(6).shuffle_index(100)
    assert sorted(perm.tolist()) == list(range(100))
    assert np.array_equal(perm, Rng(6).shuffle_index(100))


def test_counter_advances():
    r = Rng(0)
    assert r.counter == 0
    r.uniform((5,))
    assert r.counter == 5


def test_seed_validation():
    with pytest.raises(ConfigError):
        Rng(-1)
    with pytest.raises(ConfigError):
        Rng(2 ** 64)
