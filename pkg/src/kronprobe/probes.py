"""Deterministic, seeded probe vectors.

Four probe families: dense Gaussian, dense Rademacher, and their rank-one
Kronecker counterparts x = x_tilde (x) x_hat.  Generation is counter-based:
a Philox stream is keyed by (seed, stream, distribution) and each sample
owns a fixed, disjoint block of the counter space, so sample i can be
generated in isolation — parallel and serial runs, batched or one-by-one,
draw bitwise-identical vectors.

Gaussian entries come from the inverse normal CDF applied to the uniform
stream (branch-free per element, reproducible across platforms and
backends) rather than from rejection sampling, which would consume a
data-dependent number of uniforms per sample.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.random import Generator, Philox

from . import _accel

__all__ = [
    "Distribution",
    "RankOneProbe",
    "draw_probe",
    "draw_probe_batch",
    "enumerate_rademacher_rank_one",
]

# Uniforms are i/2^53 in [0, 1); recentering by half a spacing keeps them in
# (0, 1) so the quantile transform never sees an endpoint.
_HALF_ULP = 2.0 ** -54

_MASK64 = (1 << 64) - 1


class Distribution(Enum):
    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"
    RANK_ONE_GAUSSIAN = "rank1-gaussian"
    RANK_ONE_RADEMACHER = "rank1-rademacher"

    @property
    def is_rank_one(self):
        return self in (Distribution.RANK_ONE_GAUSSIAN, Distribution.RANK_ONE_RADEMACHER)

    @property
    def is_gaussian(self):
        return self in (Distribution.GAUSSIAN, Distribution.RANK_ONE_GAUSSIAN)

    @classmethod
    def from_flag(cls, flag):
        """Parse a CLI-style tag like ``"rank1-gaussian"``."""
        for member in cls:
            if member.value == flag:
                return member
        raise ValueError(
            f"unknown distribution {flag!r}; expected one of "
            + ", ".join(m.value for m in cls)
        )


@dataclass(frozen=True)
class RankOneProbe:
    """A probe x = x_tilde (x) x_hat, stored by its two factors."""

    x_tilde: np.ndarray
    x_hat: np.ndarray
    distribution: Distribution
    seed: int
    sample_index: int

    @property
    def n(self):
        return self.x_tilde.shape[0] * self.x_hat.shape[0]

    def kron(self):
        """Materialize the length-n vector (column-major vec of x_hat x_tilde^T)."""
        return np.kron(self.x_tilde, self.x_hat)


def _splitmix64(z):
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _stream_key(seed, stream, dist):
    """128-bit Philox key from (seed, stream, distribution tag)."""
    ordinal = list(Distribution).index(dist)
    h = _splitmix64(seed & _MASK64)
    h = _splitmix64(h ^ _splitmix64(stream & _MASK64))
    k0 = _splitmix64(h ^ ordinal)
    k1 = _splitmix64(k0)
    return np.array([k0, k1], dtype=np.uint64)


def _words_per_sample(dist, n, n_hat, n_tilde):
    return (n_tilde + n_hat) if dist.is_rank_one else n


def _blocks_per_sample(words):
    # Philox emits 4 uniform doubles per counter block.
    return (words + 3) // 4


def _validate(dist, n, n_hat, n_tilde):
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    if dist.is_rank_one:
        if n_hat is None or n_tilde is None:
            raise ValueError("rank-one distributions need n_hat and n_tilde")
        if n_hat <= 0 or n_tilde <= 0:
            raise ValueError(f"factor sizes must be positive, got ({n_hat}, {n_tilde})")
        if n_hat * n_tilde != n:
            raise ValueError(
                f"invalid factorization: n_hat*n_tilde = {n_hat * n_tilde} != n = {n}"
            )


def _uniform_batch(dist, seed, stream, first_index, count, words):
    """(count, words) uniforms in (0, 1); row i is sample first_index + i."""
    blocks = _blocks_per_sample(words)
    key = _stream_key(seed, stream, dist)
    gen = Generator(Philox(key=key, counter=first_index * blocks))
    u = gen.random(count * blocks * 4).reshape(count, blocks * 4)[:, :words]
    return np.ascontiguousarray(u) + _HALF_ULP


def _transform(dist, u):
    if dist.is_gaussian:
        flat = _accel.gauss_from_uniform(u.reshape(-1))
        return flat.reshape(u.shape)
    return np.where(u < 0.5, -1.0, 1.0)


def draw_probe_batch(dist, n, n_hat=None, n_tilde=None, seed=0, first_index=0, count=1, stream=0):
    """Draw ``count`` consecutive probes starting at ``first_index``.

    Returns (xt, xh) of shapes (count, n_tilde), (count, n_hat) for rank-one
    distributions, else a (count, n) array.  Bitwise identical to drawing the
    same indices one at a time.
    """
    _validate(dist, n, n_hat, n_tilde)
    words = _words_per_sample(dist, n, n_hat, n_tilde)
    u = _uniform_batch(dist, seed, stream, first_index, count, words)
    values = _transform(dist, u)
    if dist.is_rank_one:
        return values[:, :n_tilde], values[:, n_tilde:]
    return values


def draw_probe(dist, n, n_hat=None, n_tilde=None, seed=0, sample_index=0, stream=0):
    """Draw one probe: a RankOneProbe for rank-one tags, else a length-n vector."""
    drawn = draw_probe_batch(dist, n, n_hat, n_tilde, seed, sample_index, 1, stream)
    if dist.is_rank_one:
        xt, xh = drawn
        return RankOneProbe(xt[0], xh[0], dist, seed, sample_index)
    return drawn[0]


_ENUM_GUARD = 24


def enumerate_rademacher_rank_one(n_hat, n_tilde):
    """Yield all 2^(n_hat+n_tilde) rank-one Rademacher probes exactly once.

    Probe ``code`` maps its low n_tilde bits to x_tilde and the next n_hat
    bits to x_hat (set bit -> +1).
    """
    if n_hat <= 0 or n_tilde <= 0:
        raise ValueError("factor sizes must be positive")
    bits = n_hat + n_tilde
    if bits > _ENUM_GUARD:
        raise ValueError(
            f"enumeration needs 2^{bits} probes; guard is n_hat+n_tilde <= {_ENUM_GUARD}"
        )
    for code in range(1 << bits):
        xt = np.array(
            [1.0 if (code >> j) & 1 else -1.0 for j in range(n_tilde)]
        )
        xh = np.array(
            [1.0 if (code >> (n_tilde + i)) & 1 else -1.0 for i in range(n_hat)]
        )
        yield RankOneProbe(xt, xh, Distribution.RANK_ONE_RADEMACHER, 0, code)
