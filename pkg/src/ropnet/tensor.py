"""Dense tensor primitives and a deterministic, seedable PRNG.

Tensors are plain ``numpy.ndarray`` objects: contiguous, row-major,
64-bit floats, rank 1 to 3.  ``as_tensor`` is the validating
constructor; the kernels below check shapes and delegate the inner
loops to numpy.

Randomness comes from :class:`SeededRng`, a SplitMix64 counter
generator.  The algorithm is fixed and documented here rather than
borrowed from a platform default so that identical seeds give
bit-identical streams on every machine:

    state <- state + 0x9E3779B97F4A7C15          (per draw)
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    output = z ^ (z >> 31)                        (64 random bits)

Uniform doubles take the top 53 bits of the output, giving values in
[0, 1) on an exact 2^-53 grid.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, RangeError

Tensor = np.ndarray

MAX_RANK = 3

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U53 = np.float64(1.0 / (1 << 53))


def as_tensor(data, shape=None) -> Tensor:
    """Validate ``data`` as a rank-1..3 float64 row-major tensor.

    Copies only when the input is not already contiguous float64.
    Raises DimensionError for bad ranks and RangeError for non-finite
    values.
    """
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    if not 1 <= arr.ndim <= MAX_RANK:
        raise DimensionError(f"tensor rank must be 1..{MAX_RANK}, got {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise RangeError("tensor contains non-finite values")
    return arr


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Rank-2 matrix product c[i,j] = sum_p a[i,p] b[p,j]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(
            f"matmul needs rank-2 operands, got shapes {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul inner extents differ: {a.shape} x {b.shape}"
        )
    return a @ b


def softmax_last_axis(x: Tensor) -> Tensor:
    """Softmax along the last axis, stabilized by max subtraction.

    Every slice of the output is nonnegative and sums to 1; inputs of
    magnitude up to ~1e308 cannot overflow because the largest shifted
    exponent is exp(0).
    """
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


class SeededRng:
    """SplitMix64 stream; identical seeds give identical sequences.

    The generator is single-threaded by design.  Code that needs
    independent parallel streams must derive children with
    :meth:`spawn` instead of sharing one instance.
    """

    def __init__(self, seed: int):
        self._state = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)

    def _next_block(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs, identical to n scalar draws."""
        with np.errstate(over="ignore"):
            steps = (np.arange(1, n + 1, dtype=np.uint64)) * _GAMMA
            z = self._state + steps
            self._state = self._state + np.uint64(n) * _GAMMA
            z = (z ^ (z >> np.uint64(30))) * _MIX1
            z = (z ^ (z >> np.uint64(27))) * _MIX2
            return z ^ (z >> np.uint64(31))

    def next_u64(self) -> int:
        """Single raw 64-bit draw."""
        return int(self._next_block(1)[0])

    def uniform(self, shape, lo: float = 0.0, hi: float = 1.0) -> Tensor:
        """Tensor of i.i.d. draws from [lo, hi)."""
        if not lo < hi:
            raise RangeError(f"uniform needs lo < hi, got lo={lo}, hi={hi}")
        if np.isscalar(shape):
            shape = (int(shape),)
        n = int(np.prod(shape)) if len(shape) else 1
        bits = self._next_block(n)
        u01 = (bits >> np.uint64(11)).astype(np.float64) * _U53
        return (lo + (hi - lo) * u01).reshape(shape)

    def normal(self, shape) -> Tensor:
        """Standard normal draws via Box-Muller on the uniform stream."""
        if np.isscalar(shape):
            shape = (int(shape),)
        n = int(np.prod(shape)) if len(shape) else 1
        pairs = (n + 1) // 2
        u = self.uniform((2, pairs))
        r = np.sqrt(-2.0 * np.log1p(-u[0]))  # 1-u in (0,1], log finite
        theta = 2.0 * np.pi * u[1]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) by sorting random keys."""
        return np.argsort(self.uniform(n), kind="stable")

    def shuffle(self, values: np.ndarray) -> np.ndarray:
        """Shuffled copy of a 1-D array."""
        return np.asarray(values)[self.permutation(len(values))]

    def spawn(self) -> "SeededRng":
        """Child generator with a seed drawn from this stream."""
        return SeededRng(self.next_u64())


def seeded_uniform(rng: SeededRng, shape, lo: float, hi: float) -> Tensor:
    """Functional form of :meth:`SeededRng.uniform`."""
    return rng.uniform(shape, lo, hi)
