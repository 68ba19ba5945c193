"""Self-contained counter-based random number generator.

The generator is SplitMix64 used in counter mode: draw ``i`` of a stream is
``mix64(key + (counter + i) * GOLDEN)`` where ``key`` is the mixed seed,
``GOLDEN`` is the 64-bit golden-ratio constant and ``mix64`` is the usual
xor-shift-multiply finalizer.  No platform RNG is involved, so a seed gives
the same stream on every platform for a given build.  Uniform doubles take
the top 53 bits of each word; normals come from the Box-Muller transform.

State is just ``(seed, counter)``, which makes snapshot/restore for
checkpointing trivial.
"""

from __future__ import annotations

import numpy as np

from . import precision
from .errors import ConfigError

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

_U64_TO_UNIT = float(2.0**-53)


def _mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer: a bijective avalanche on uint64."""
    x = (x ^ (x >> np.uint64(30))) * _MIX1
    x = (x ^ (x >> np.uint64(27))) * _MIX2
    return x ^ (x >> np.uint64(31))


class Rng:
    """Deterministic stream of uniform/normal samples.

    Identical seeds yield identical streams.  ``state()``/``set_state()``
    expose the (seed, counter) pair for exact checkpoint resume.
    """

    def __init__(self, seed: int):
        if seed < 0 or seed >= 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self._key = np.uint64(_mix64(np.array([seed], dtype=np.uint64) + GOLDEN)[0])
        self.counter = 0

    def state(self) -> tuple[int, int]:
        return (self.seed, self.counter)

    def set_state(self, state) -> None:
        seed, counter = state
        if seed != self.seed:
            self.__init__(int(seed))
        self.counter = int(counter)

    def spawn(self, stream: int) -> "Rng":
        """Independent child stream; deterministic function of (seed, stream)."""
        child = _mix64(np.array([self.seed], dtype=np.uint64) ^ _mix64(
            np.array([stream], dtype=np.uint64) * GOLDEN + np.uint64(1)))
        return Rng(int(child[0]))

    def _words(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
            out = _mix64(self._key + idx * GOLDEN)
        self.counter += n
        return out

    def _unit_open(self, n: int) -> np.ndarray:
        # in (0, 1): safe for log() in Box-Muller
        return ((self._words(n) >> np.uint64(11)).astype(np.float64) + 0.5) * _U64_TO_UNIT

    def uniform(self, shape=(), lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """i.i.d. samples from [lo, hi)."""
        if lo >= hi:
            raise ConfigError(f"uniform bounds require lo < hi, got [{lo}, {hi})")
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = (self._words(n) >> np.uint64(11)).astype(np.float64) * _U64_TO_UNIT
        out = (lo + (hi - lo) * u).astype(precision.dtype())
        return out.reshape(shape)

    def normal(self, shape=()) -> np.ndarray:
        """i.i.d. standard normal samples (Box-Muller)."""
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        m = (n + 1) // 2
        u1 = self._unit_open(m)
        u2 = self._unit_open(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * np.pi) * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.astype(precision.dtype()).reshape(shape)

    def integers(self, lo: int, hi: int, shape=()) -> np.ndarray:
        """i.i.d. integers from [lo, hi)."""
        if lo >= hi:
            raise ConfigError(f"integer bounds require lo < hi, got [{lo}, {hi})")
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = (self._words(n) >> np.uint64(11)).astype(np.float64) * _U64_TO_UNIT
        out = lo + np.floor(u * (hi - lo)).astype(np.int64)
        return out.reshape(shape)

    def shuffle_index(self, n: int) -> np.ndarray:
        """A random permutation of range(n) (Fisher-Yates driven by this stream)."""
        perm = np.arange(n)
        if n < 2:
            return perm
        # draws for positions n-1 .. 1
        u = (self._words(n - 1) >> np.uint64(11)).astype(np.float64) * _U64_TO_UNIT
        for i in range(n - 1, 0, -1):
            j = int(u[n - 1 - i] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def _as_shape(shape) -> tuple:
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(s) for s in shape)
