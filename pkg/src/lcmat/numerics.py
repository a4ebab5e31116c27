"""Shared numerical kernels and the deterministic random source.

All arithmetic is float64. Reductions go through numpy's contiguous
pairwise summation, so the same inputs always produce the same bits.
``argmax`` follows numpy semantics: ties resolve to the lowest index.
"""

from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "philox4x64-10"

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One round of the SplitMix64 finalizer on a 64-bit integer."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class Rng:
    """Seeded Philox stream.

    The 64-bit seed is the Philox key; the counter starts at zero. Child
    streams for parallel workers use ``splitmix64(seed ^ splitmix64(index))``
    as their key, so the parent stream is never consumed by splitting.
    """

    algorithm = RNG_ALGORITHM

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed <= _MASK64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = seed
        self.generator = np.random.Generator(np.random.Philox(key=seed))

    def spawn(self, index: int) -> "Rng":
        return Rng(splitmix64(self.seed ^ splitmix64(int(index))))

    def normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self.generator.choice(n, size=size, replace=replace)

    def __repr__(self):
        return f"Rng(seed={self.seed}, algorithm={self.algorithm!r})"


def as_rng(rng_or_seed) -> Rng:
    if isinstance(rng_or_seed, Rng):
        return rng_or_seed
    return Rng(rng_or_seed)


def check_finite(a, name: str = "array") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def l2_norm(v) -> float:
    """Euclidean norm of a finite vector."""
    v = check_finite(v, "vector").ravel()
    return float(np.sqrt(np.dot(v, v)))


def sample_sphere(rng: Rng, dim: int, radius: float) -> np.ndarray:
    """Draw a point uniformly from the closed ``dim``-ball of ``radius``.

    The direction is a normalized Gaussian; the length is
    ``radius * u ** (1 / dim)`` with ``u ~ U(0, 1)``.
    """
    return sample_ball(rng, 1, dim, radius)[0]


def sample_ball(rng: Rng, count: int, dim: int, radius: float) -> np.ndarray:
    """Vectorized :func:`sample_sphere`; returns ``(count, dim)``."""
    if dim < 1:
        raise ValueError("dim must be at least 1")
    if not radius > 0:
        raise ValueError("radius must be positive")
    z = rng.normal((count, dim))
    norms = np.sqrt(np.einsum("ij,ij->i", z, z))
    norms[norms == 0.0] = 1.0
    u = rng.uniform(size=count)
    scale = radius * u ** (1.0 / dim) / norms
    out = z * scale[:, None]
    # guard the rounding edge: the constraint must hold exactly
    lengths = np.sqrt(np.einsum("ij,ij->i", out, out))
    over = lengths > radius
    if np.any(over):
        out[over] *= (radius / lengths[over])[:, None] * (1 - 1e-15)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-shift."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
