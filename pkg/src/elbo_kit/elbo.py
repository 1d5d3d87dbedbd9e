"""Evidence lower bound: two-term estimator and an exactly solvable oracle.

The estimator splits the bound the standard way: an exact closed-form KL
term against the prior plus an L-sample Monte Carlo reconstruction term
(one likelihood evaluation per reparameterized draw).

The oracle is a linear-Gaussian latent model (standard-normal prior,
linear decoder, isotropic observation noise).  Its log-marginal p(x) and
posterior p(z|x) are available in closed form, which is what makes the
bound itself empirically checkable: log p(x) minus the estimated bound
must be a non-negative gap, and the gap vanishes when the variational
distribution is the exact posterior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from elbo_kit.divergence import _eval_density_fn, kl_gaussian_closed
from elbo_kit.gaussian_core import (
    DiagonalGaussian,
    RngState,
    sample_reparameterized_batch,
)

_MAX_ORACLE_DIM = 16


@dataclass(frozen=True)
class ElboBreakdown:
    """The bound split into its two terms (all nats).

    ``neg_kl_term`` is minus the exact KL against the prior, so it is never
    positive.  ``recon_std_error`` is the Monte Carlo standard error of the
    reconstruction term (0.0 when only one sample is drawn).
    """

    neg_kl_term: float
    recon_term: float
    elbo: float
    n_recon_samples: int
    recon_std_error: float


@dataclass(frozen=True)
class LinearGaussianModel:
    """Latent model z ~ N(0, I_J), x | z ~ N(A z + b, noise_variance I).

    The marginal over data is N(b, A A^T + noise_variance I), exactly.
    Dimensions are capped at 16 on both sides; this is a desk-scale oracle,
    not a production model.
    """

    weight: np.ndarray
    bias: np.ndarray
    noise_variance: float

    def __post_init__(self):
        object.__setattr__(
            self, "weight", np.array(self.weight, dtype=np.float64, copy=True)
        )
        object.__setattr__(
            self, "bias", np.array(self.bias, dtype=np.float64, copy=True)
        )
        if self.weight.ndim != 2:
            raise ValueError(f"weight must be (data_dim, latent_dim), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match data_dim {self.weight.shape[0]}"
            )
        if not self.noise_variance > 0.0:
            raise ValueError(f"noise_variance must be positive, got {self.noise_variance}")
        if max(self.weight.shape) > _MAX_ORACLE_DIM:
            raise ValueError(f"oracle dimensions are capped at {_MAX_ORACLE_DIM}")

    @property
    def data_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class FullGaussian:
    """Gaussian with a full covariance matrix (oracle posteriors need one)."""

    mean: np.ndarray
    cov: np.ndarray

    def diagonal(self) -> DiagonalGaussian:
        """Drop off-diagonal covariance; exact when cov is already diagonal."""
        return DiagonalGaussian(mean=self.mean, variance=np.diag(self.cov).copy())


def elbo_estimate(
    q: DiagonalGaussian,
    prior: DiagonalGaussian,
    log_likelihood,
    L: int,
    rng: RngState | None = None,
    eps: np.ndarray | None = None,
) -> ElboBreakdown:
    """Two-term bound estimate: exact KL term plus L-sample reconstruction.

    Args:
        q: variational distribution the draws come from.
        prior: latent prior (same dimension as q).
        log_likelihood: log p(x | z).  Tried on the whole ``(L, d)`` draw
            batch at once, falling back to one call per draw.
        L: number of reconstruction samples, at least 1.
        rng: noise source; may be omitted when ``eps`` is given.
        eps: optional frozen noise, shape ``(L, d)``.  Makes the estimate a
            deterministic function of its inputs (used by gradient checks
            and identity tests).

    Returns:
        ElboBreakdown with elbo = neg_kl_term + recon_term.
    """
    if L < 1:
        raise ValueError(f"need L >= 1 reconstruction samples, got {L}")
    if q.dim != prior.dim:
        raise ValueError(f"dimension mismatch: q has {q.dim}, prior has {prior.dim}")
    if eps is not None:
        eps = np.asarray(eps, dtype=np.float64)
        if eps.shape != (L, q.dim):
            raise ValueError(f"eps has shape {eps.shape}, expected ({L}, {q.dim})")
        zs = q.mean + q.std * eps
    else:
        if rng is None:
            raise ValueError("need an rng when eps is not frozen")
        zs, _ = sample_reparameterized_batch(q, L, rng)
    lls = _eval_density_fn(log_likelihood, zs)
    bad = np.flatnonzero(~np.isfinite(lls))
    if bad.size:
        k = int(bad[0])
        raise ValueError(f"log_likelihood non-finite ({lls[k]}) at draw {k}, z={zs[k]}")
    neg_kl = -kl_gaussian_closed(q, prior)
    recon = float(np.mean(lls))
    se = float(np.std(lls, ddof=1) / math.sqrt(L)) if L > 1 else 0.0
    return ElboBreakdown(
        neg_kl_term=neg_kl,
        recon_term=recon,
        elbo=neg_kl + recon,
        n_recon_samples=L,
        recon_std_error=se,
    )


def model_log_likelihood_fn(model: LinearGaussianModel, x: np.ndarray):
    """log p(x | z) under the linear-Gaussian model, vectorized over draws.

    Returns a function mapping latents ``(L, J)`` to log-likelihoods ``(L,)``.
    """
    x = np.asarray(x, dtype=np.float64)
    d = model.data_dim
    const = -0.5 * d * math.log(2.0 * math.pi * model.noise_variance)

    def loglik(zs):
        zs = np.atleast_2d(np.asarray(zs, dtype=np.float64))
        resid = x - (zs @ model.weight.T + model.bias)
        return const - np.sum(resid**2, axis=1) / (2.0 * model.noise_variance)

    return loglik


def _marginal_covariance(model: LinearGaussianModel) -> np.ndarray:
    d = model.data_dim
    return model.weight @ model.weight.T + model.noise_variance * np.eye(d)


def exact_log_marginal(model: LinearGaussianModel, x: np.ndarray) -> float:
    """log p(x) under the model: Gaussian log-density with the exact marginal
    covariance A A^T + noise_variance I, via determinant and solve."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.data_dim,):
        raise ValueError(f"x has shape {x.shape}, expected ({model.data_dim},)")
    cov = _marginal_covariance(model)
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise ValueError("marginal covariance is not positive definite")
    resid = x - model.bias
    maha = float(resid @ np.linalg.solve(cov, resid))
    return float(-0.5 * (model.data_dim * math.log(2.0 * math.pi) + logdet + maha))


def exact_posterior(model: LinearGaussianModel, x: np.ndarray) -> FullGaussian:
    """p(z | x): the conjugate Gaussian posterior.

    Covariance (I + A^T A / noise_variance)^-1 and mean
    cov A^T (x - b) / noise_variance.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.data_dim,):
        raise ValueError(f"x has shape {x.shape}, expected ({model.data_dim},)")
    j = model.latent_dim
    precision = np.eye(j) + model.weight.T @ model.weight / model.noise_variance
    cov = np.linalg.inv(precision)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ model.weight.T @ (x - model.bias) / model.noise_variance
    return FullGaussian(mean=mean, cov=cov)


def bound_gap(
    model: LinearGaussianModel,
    x: np.ndarray,
    q: DiagonalGaussian,
    L: int,
    rng: RngState | None = None,
    eps: np.ndarray | None = None,
) -> float:
    """Slack of the bound: exact log p(x) minus the estimated bound.

    In expectation this equals KL(q || p(z|x)), hence it is non-negative and
    vanishes exactly when q is the true posterior.
    """
    breakdown = elbo_estimate(
        q,
        DiagonalGaussian(np.zeros(model.latent_dim), np.ones(model.latent_dim)),
        model_log_likelihood_fn(model, x),
        L,
        rng=rng,
        eps=eps,
    )
    return exact_log_marginal(model, x) - breakdown.elbo


def sample_observations(model: LinearGaussianModel, n: int, rng: RngState) -> np.ndarray:
    """Draw n data points from the model (ancestral sampling), shape (n, data_dim)."""
    zs = rng.normals(n * model.latent_dim).reshape(n, model.latent_dim)
    noise = rng.normals(n * model.data_dim).reshape(n, model.data_dim)
    return zs @ model.weight.T + model.bias + math.sqrt(model.noise_variance) * noise
