"""KL divergence three ways, plus the inequality behind its non-negativity.

The same quantity KL(q || p) = E_q[log q - log p] is computed by three
independent routes that check each other:

* closed form for diagonal Gaussians (exact),
* Monte Carlo under draws from q (estimate with a standard error),
* composite-Simpson quadrature of the defining integral (1-D oracle).

All values are in nats.  A small discrete Bayes update is included as a
test fixture for posterior-from-joint identities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from elbo_kit.gaussian_core import (
    DiagonalGaussian,
    RngState,
    sample_reparameterized_batch,
)


@dataclass(frozen=True)
class KlEstimate:
    """A divergence value with its sampling uncertainty.

    ``std_error`` and ``n_samples`` are zero for exact methods.
    """

    value: float
    std_error: float
    n_samples: int

    def __post_init__(self):
        if self.std_error < 0.0:
            raise ValueError("std_error must be non-negative")
        if self.n_samples < 0:
            raise ValueError("n_samples must be non-negative")


@dataclass(frozen=True)
class QuadratureSpec:
    """Integration window and grid size for the 1-D Simpson oracle.

    ``n_points`` must be odd (composite Simpson needs an even panel count)
    and at least 1001 so the oracle is never run at toy resolution.
    """

    lower: float
    upper: float
    n_points: int

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"need lower < upper, got [{self.lower}, {self.upper}]")
        if self.n_points < 1001:
            raise ValueError(f"n_points must be >= 1001, got {self.n_points}")
        if self.n_points % 2 == 0:
            raise ValueError(f"n_points must be odd, got {self.n_points}")


def kl_gaussian_closed(q: DiagonalGaussian, p: DiagonalGaussian) -> float:
    """Exact KL(q || p) for diagonal Gaussians, in nats.

    Per dimension: 0.5 (log vp - log vq) + (vq + (mq - mp)^2) / (2 vp) - 0.5.
    The log of the standard-deviation ratio is taken as half the difference
    of log-variances, so no square root enters the computation.
    """
    if q.dim != p.dim:
        raise ValueError(f"dimension mismatch: q has {q.dim}, p has {p.dim}")
    terms = (
        0.5 * (np.log(p.variance) - np.log(q.variance))
        + (q.variance + (q.mean - p.mean) ** 2) / (2.0 * p.variance)
        - 0.5
    )
    return float(np.sum(terms))


def kl_vs_standard_normal(q: DiagonalGaussian) -> float:
    """KL(q || N(0, I)) via the special-case closed form.

    Equals ``-sum_j 0.5 [1 + log vq_j - vq_j - mq_j^2]``; agrees with
    ``kl_gaussian_closed(q, standard_normal(q.dim))`` up to float
    rearrangement (within 1e-12).
    """
    return float(
        -np.sum(0.5 * (1.0 + np.log(q.variance) - q.variance - q.mean**2))
    )


def gaussian_logpdf_1d(g: DiagonalGaussian):
    """Vectorized scalar log-density for a 1-D Gaussian.

    Returns a function mapping an array of points to an array of
    log-densities, suitable for :func:`kl_quadrature_1d`.
    """
    if g.dim != 1:
        raise ValueError(f"need a 1-D distribution, got dim {g.dim}")
    mean = float(g.mean[0])
    var = float(g.variance[0])
    const = -0.5 * math.log(2.0 * math.pi * var)

    def logpdf(xs):
        xs = np.asarray(xs, dtype=np.float64).reshape(-1)
        return const - (xs - mean) ** 2 / (2.0 * var)

    return logpdf


def _eval_density_fn(fn, zs: np.ndarray) -> np.ndarray:
    """Call a log-density fn on a batch ``(n, d)``; fall back to per-row calls."""
    try:
        out = np.asarray(fn(zs), dtype=np.float64)
        if out.shape == (zs.shape[0],):
            return out
    except (TypeError, ValueError):
        pass
    return np.array([float(fn(z)) for z in zs], dtype=np.float64)


def _eval_scalar_fn(fn, xs: np.ndarray) -> np.ndarray:
    """Call a 1-D log-density fn on a grid ``(n,)``; fall back to per-point calls."""
    try:
        out = np.asarray(fn(xs), dtype=np.float64)
        if out.shape == xs.shape:
            return out
    except (TypeError, ValueError):
        pass
    return np.array([float(fn(x)) for x in xs], dtype=np.float64)


def kl_monte_carlo(
    q: DiagonalGaussian, log_q, log_p, n: int, rng: RngState
) -> KlEstimate:
    """KL(q || p) as the sample mean of log q(z) - log p(z) under z ~ q.

    Args:
        q: distribution the draws come from (reparameterized sampling).
        log_q, log_p: log-density functions.  They are tried on the whole
            ``(n, d)`` draw batch first and fall back to per-draw calls.
        n: number of draws, at least 2.
        rng: noise source (caller-owned; one per thread).

    Returns:
        KlEstimate with the unbiased-sample-std standard error.
    """
    if n < 2:
        raise ValueError(f"need n >= 2 samples, got {n}")
    zs, _ = sample_reparameterized_batch(q, n, rng)
    lq = _eval_density_fn(log_q, zs)
    lp = _eval_density_fn(log_p, zs)
    for name, vals in (("log_q", lq), ("log_p", lp)):
        bad = np.flatnonzero(~np.isfinite(vals))
        if bad.size:
            k = int(bad[0])
            raise ValueError(
                f"{name} returned non-finite value {vals[k]} at draw {k}, z={zs[k]}"
            )
    delta = lq - lp
    value = float(np.mean(delta))
    std_error = float(np.std(delta, ddof=1) / math.sqrt(n))
    return KlEstimate(value=value, std_error=std_error, n_samples=n)


def kl_quadrature_1d(q_logpdf, p_logpdf, spec: QuadratureSpec) -> float:
    """Composite-Simpson approximation of the 1-D integral q log(q/p).

    The caller supplies a window that contains q's mass (mean +- 10 sigma or
    wider); Gaussian tails beyond that are under 1e-22 and irrelevant at the
    tolerances used here.  Both log-density functions must be finite on the
    window; a non-finite integrand raises with the offending abscissa.
    """
    xs = np.linspace(spec.lower, spec.upper, spec.n_points)
    lq = _eval_scalar_fn(q_logpdf, xs)
    lp = _eval_scalar_fn(p_logpdf, xs)
    integrand = np.exp(lq) * (lq - lp)
    bad = np.flatnonzero(~np.isfinite(integrand))
    if bad.size:
        k = int(bad[0])
        raise ValueError(f"non-finite integrand {integrand[k]} at x={xs[k]}")
    h = (spec.upper - spec.lower) / (spec.n_points - 1)
    weights = np.ones(spec.n_points)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    return float(h / 3.0 * np.sum(weights * integrand))


def default_quadrature_spec(
    q: DiagonalGaussian, p: DiagonalGaussian, points_per_sigma: int = 50
) -> QuadratureSpec:
    """Window and grid that make the Simpson oracle accurate for a 1-D pair.

    The window is the union of both distributions' mean +- 10 sigma; the
    grid resolves q's standard deviation with ``points_per_sigma`` points
    (q is the weight in the integrand, so its scale is the one that
    matters), and never drops below 100001 points.
    """
    if q.dim != 1 or p.dim != 1:
        raise ValueError("quadrature oracle is 1-D only")
    sq, sp = float(q.std[0]), float(p.std[0])
    lower = min(float(q.mean[0]) - 10.0 * sq, float(p.mean[0]) - 10.0 * sp)
    upper = max(float(q.mean[0]) + 10.0 * sq, float(p.mean[0]) + 10.0 * sp)
    n = max(100001, int(math.ceil((upper - lower) / sq * points_per_sigma)))
    if n % 2 == 0:
        n += 1
    return QuadratureSpec(lower=lower, upper=upper, n_points=n)


def log_bound_check(t: float) -> bool:
    """Whether log t <= t - 1 holds at t (> 0).

    True for every positive t, with equality exactly at t = 1; this is the
    tangent-line bound that forces KL to be non-negative.
    """
    if not t > 0.0:
        raise ValueError(f"t must be positive, got {t}")
    return math.log(t) <= t - 1.0


def bayes_posterior(prior, likelihood, evidence_index: int) -> np.ndarray:
    """Discrete Bayes update: posterior over hypotheses given one observation.

    Args:
        prior: probabilities over hypotheses, shape ``(k,)``, summing to 1.
        likelihood: conditional table, shape ``(k, m)``; row z holds the
            distribution of observations given hypothesis z (rows sum to 1).
        evidence_index: column of the observed outcome.

    Returns:
        posterior[z] = likelihood[z, x] prior[z] / sum_z' likelihood[z', x] prior[z'].
    """
    prior = np.asarray(prior, dtype=np.float64)
    likelihood = np.asarray(likelihood, dtype=np.float64)
    if prior.ndim != 1 or likelihood.ndim != 2 or likelihood.shape[0] != prior.shape[0]:
        raise ValueError(
            f"shape mismatch: prior {prior.shape}, likelihood {likelihood.shape}"
        )
    if not math.isclose(float(np.sum(prior)), 1.0, abs_tol=1e-9):
        raise ValueError("prior must sum to 1")
    if not np.allclose(np.sum(likelihood, axis=1), 1.0, atol=1e-9):
        raise ValueError("every likelihood row must sum to 1")
    if not 0 <= evidence_index < likelihood.shape[1]:
        raise ValueError(f"evidence_index {evidence_index} out of range")
    joint = likelihood[:, evidence_index] * prior
    evidence = float(np.sum(joint))
    if evidence <= 0.0:
        raise ValueError("observed evidence has zero probability under the model")
    return joint / evidence
