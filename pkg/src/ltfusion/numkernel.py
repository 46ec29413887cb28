"""Small deterministic numeric substrate.

Vectors and matrices are plain float64 numpy arrays (1-D and 2-D). The
helpers here validate shapes and finiteness and implement the handful of
primitives the rest of the package is built on.

The random generator is SplitMix64: the state advances by the constant
``0x9E3779B97F4A7C15`` per draw and each output is the state passed through
the xor-shift/multiply finalizer::

    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z = z ^ (z >> 31)

all modulo 2**64. Uniform doubles take the top 53 bits, ``(z >> 11) * 2**-53``.
Because the state is a counter, a block of ``n`` outputs can be produced in
one vectorized pass and is identical to ``n`` scalar draws.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class ShapeError(ValueError):
    """Raised when array dimensions do not line up."""


def as_vector(x, name: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name}: expected a 1-D array, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name}: contains non-finite values")
    return v


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name}: expected a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name}: contains non-finite values")
    return m


def matvec(m, v) -> np.ndarray:
    """Return ``m @ v``.

    Each output element is accumulated left to right over the columns, so the
    result is bit-identical to the textbook scalar double loop.
    """
    m = as_matrix(m, "m")
    v = as_vector(v, "v")
    if m.shape[1] != v.shape[0]:
        raise ShapeError(
            f"matvec: matrix is {m.shape[0]}x{m.shape[1]} but vector has length {v.shape[0]}"
        )
    out = np.zeros(m.shape[0])
    for j in range(m.shape[1]):
        out += m[:, j] * v[j]
    return out


def softmax(z) -> np.ndarray:
    """Max-shifted softmax of a 1-D array of logits."""
    z = as_vector(z, "logits")
    if z.size == 0:
        raise ValueError("softmax: empty input")
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_rows(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax for a batch of logits of shape (n, K)."""
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def relu(v) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(max(0, v), mask)`` where mask is 1.0 where ``v > 0``."""
    v = as_vector(v, "v")
    mask = (v > 0).astype(np.float64)
    return v * mask, mask


def argmax_first(v) -> int:
    """Index of the maximum; ties go to the lowest index."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("argmax_first: expected a non-empty 1-D array")
    # np.argmax already returns the first occurrence
    return int(np.argmax(v))


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 generator. See the module docstring for the exact stream."""

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be non-negative")
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
            out = _mix64(states)
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        return out

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1)."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def gaussian(self, n: int) -> np.ndarray:
        """``n`` standard normal draws by Box-Muller.

        Uniforms are consumed in pairs ``(u1, u2)``; each pair yields
        ``r*cos(2*pi*u2)`` then ``r*sin(2*pi*u2)`` with
        ``r = sqrt(-2 ln(1 - u1))``. An odd ``n`` discards the final sine.
        """
        if n < 0:
            raise ValueError("n must be non-negative")
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * math.pi * u[:, 1]
        out = np.empty((pairs, 2))
        out[:, 0] = r * np.cos(theta)
        out[:, 1] = r * np.sin(theta)
        return out.reshape(-1)[:n]

    def randint(self, low: int, high: int) -> int:
        """Uniform integer in the closed range [low, high] (rejection sampling)."""
        if high < low:
            raise ValueError(f"empty range [{low}, {high}]")
        span = high - low + 1
        limit = (1 << 64) - ((1 << 64) % span)
        while True:
            x = int(self.next_u64(1)[0])
            if x < limit:
                return low + x % span

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        idx = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.randint(0, i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx


def rng_gaussian(rng: Rng, n: int) -> np.ndarray:
    return rng.gaussian(n)
