"""Diagonal Gaussian distributions and a reproducible noise source.

The random number generator is deliberately not numpy's: it is a small
counter-based generator so that identical seeds give bit-identical sample
streams on every platform, with no hidden global state.

RNG construction (the full recipe, so results can be reproduced anywhere):

1. Word stream.  Draw ``i`` runs from 0, 1, 2, ...  The i-th raw word is
   ``mix64(seed + GOLDEN * (counter + i) mod 2^64)`` where
   ``GOLDEN = 0x9E3779B97F4A7C15`` and ``mix64`` is the SplitMix64
   finalizer::

       x ^= x >> 30;  x *= 0xBF58476D1CE4E5B9
       x ^= x >> 27;  x *= 0x94D049BB133111EB
       x ^= x >> 31

   All arithmetic is modulo 2^64.  The state is just (seed, counter), so
   drawing n words advances the counter by n and nothing else.

2. Uniforms.  A word ``w`` maps to ``((w >> 11) + 1) * 2^-53``, which lies
   in (0, 1] (never 0, so it is always safe inside a logarithm).

3. Normals.  Box-Muller on uniform pairs: to draw n normals, take
   m = ceil(n / 2) pairs (u1, u2) of consecutive uniforms (all first
   members, then all second members of one 2m-uniform block), form
   ``r = sqrt(-2 ln u1)`` and ``theta = 2 pi u2``, and emit
   ``concat(r cos theta, r sin theta)`` truncated to n values.

Parallel use: one RngState per thread, derived with :meth:`RngState.split`
(seed XOR stream id).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_2 = np.uint64(0x94D049BB133111EB)
_U64_MASK = 0xFFFFFFFFFFFFFFFF
_TWO_NEG_53 = 2.0 ** -53


def _mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on a uint64 array (modulo 2^64 throughout)."""
    x = x.astype(np.uint64, copy=True)
    x ^= x >> np.uint64(30)
    x *= _MIX_1
    x ^= x >> np.uint64(27)
    x *= _MIX_2
    x ^= x >> np.uint64(31)
    return x


class RngState:
    """Counter-based pseudorandom generator (see module docstring).

    Attributes:
        seed: 64-bit unsigned seed.
        counter: number of raw words drawn so far.
    """

    def __init__(self, seed: int, counter: int = 0):
        if not 0 <= seed <= _U64_MASK:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        if counter < 0:
            raise ValueError(f"counter must be non-negative, got {counter}")
        self.seed = int(seed)
        self.counter = int(counter)

    def split(self, stream_id: int) -> "RngState":
        """Independent stream for the same run: seed XOR stream_id, fresh counter."""
        return RngState((self.seed ^ stream_id) & _U64_MASK)

    def words(self, n: int) -> np.ndarray:
        """Next n raw 64-bit words, shape ``(n,)`` uint64."""
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        return _mix64(np.uint64(self.seed) + _GOLDEN * idx)

    def uniforms(self, n: int) -> np.ndarray:
        """Next n uniforms in (0, 1], shape ``(n,)`` float64."""
        w = self.words(n)
        return ((w >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_NEG_53

    def normals(self, n: int) -> np.ndarray:
        """Next n standard-normal draws via Box-Muller, shape ``(n,)`` float64."""
        m = (n + 1) // 2
        u = self.uniforms(2 * m)
        r = np.sqrt(-2.0 * np.log(u[:m]))
        theta = (2.0 * np.pi) * u[m:]
        return np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]

    def integer_below(self, bound: int) -> int:
        """One integer in [0, bound) by word modulo (bias < 2^-50 for small bounds)."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        return int(self.words(1)[0] % np.uint64(bound))

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, counter={self.counter})"


def _readonly_f64(values, name: str) -> np.ndarray:
    out = np.array(values, dtype=np.float64, copy=True)
    if out.ndim != 1 or out.size < 1:
        raise ValueError(f"{name} must be a non-empty 1-D vector, got shape {out.shape}")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class DiagonalGaussian:
    """Gaussian with diagonal covariance: per-dimension mean and variance.

    Both fields are copied to read-only float64 vectors, so instances are
    immutable and safe to share across threads.
    """

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _readonly_f64(self.mean, "mean"))
        object.__setattr__(self, "variance", _readonly_f64(self.variance, "variance"))
        if self.mean.shape != self.variance.shape:
            raise ValueError(
                f"mean and variance must have the same length, got "
                f"{self.mean.shape[0]} and {self.variance.shape[0]}"
            )
        if not np.all(np.isfinite(self.mean)) or not np.all(np.isfinite(self.variance)):
            raise ValueError("mean and variance must be finite")
        if not np.all(self.variance > 0.0):
            raise ValueError("variance must be strictly positive in every dimension")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


@dataclass(frozen=True)
class LatentSample:
    """One reparameterized draw ``z = mean + sqrt(variance) * epsilon``.

    The driving standard-normal noise ``epsilon`` is kept so the draw can be
    replayed exactly and so gradients can be routed around the sampling.
    """

    z: np.ndarray
    epsilon: np.ndarray


def standard_normal(dim: int) -> DiagonalGaussian:
    """N(0, I) in ``dim`` dimensions."""
    return DiagonalGaussian(np.zeros(dim), np.ones(dim))


def log_pdf(g: DiagonalGaussian, x) -> float:
    """Log-density of ``g`` at a single point, summed over dimensions.

    Args:
        g: the distribution.
        x: point of length ``g.dim``.

    Returns:
        sum_i [ -0.5 log(2 pi) - 0.5 log var_i - (x_i - mean_i)^2 / (2 var_i) ]
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (g.dim,):
        raise ValueError(f"x has shape {x.shape}, expected ({g.dim},)")
    return float(
        np.sum(
            -0.5 * np.log(2.0 * np.pi)
            - 0.5 * np.log(g.variance)
            - (x - g.mean) ** 2 / (2.0 * g.variance)
        )
    )


def log_pdf_batch(g: DiagonalGaussian, xs: np.ndarray) -> np.ndarray:
    """Log-density at many points at once.

    Args:
        g: the distribution.
        xs: points, shape ``(n, d)``.

    Returns:
        Log-densities, shape ``(n,)``.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != g.dim:
        raise ValueError(f"xs has shape {xs.shape}, expected (n, {g.dim})")
    return np.sum(
        -0.5 * np.log(2.0 * np.pi)
        - 0.5 * np.log(g.variance)
        - (xs - g.mean) ** 2 / (2.0 * g.variance),
        axis=1,
    )


def information_content(p_of_x: float) -> float:
    """Information carried by an event of probability ``p_of_x``: -log p.

    Monotone decreasing: near-certain events carry almost no information,
    rare events a lot.  Requires 0 < p_of_x <= 1.
    """
    if not 0.0 < p_of_x <= 1.0:
        raise ValueError(f"probability must be in (0, 1], got {p_of_x}")
    return -float(np.log(p_of_x))


def sample_reparameterized(g: DiagonalGaussian, rng: RngState) -> LatentSample:
    """Draw z ~ g as ``mean + sqrt(variance) * epsilon`` with epsilon ~ N(0, I).

    The noise is externalized: epsilon comes from ``rng`` and is returned in
    the sample, which is what lets gradients flow through mean and variance.
    """
    epsilon = rng.normals(g.dim)
    z = g.mean + g.std * epsilon
    return LatentSample(z=z, epsilon=epsilon)


def sample_reparameterized_batch(
    g: DiagonalGaussian, n: int, rng: RngState
) -> tuple[np.ndarray, np.ndarray]:
    """n reparameterized draws in one shot.

    Returns:
        ``(z, epsilon)`` arrays, both shape ``(n, d)``, with
        ``z = mean + sqrt(variance) * epsilon`` row by row.
    """
    epsilon = rng.normals(n * g.dim).reshape(n, g.dim)
    z = g.mean + g.std * epsilon
    return z, epsilon
