"""elbo-kit: a from-scratch variational inference toolkit.

Diagonal Gaussians with a reproducible counter-based RNG, KL divergence in
closed form / Monte Carlo / quadrature, a manual-backprop MLP, ELBO
machinery with an exact linear-Gaussian oracle, and a minimal VAE trained
by minimizing the negative ELBO.
"""

__version__ = "0.1.0"

from elbo_kit.gaussian_core import (
    DiagonalGaussian,
    LatentSample,
    RngState,
    information_content,
    log_pdf,
    log_pdf_batch,
    sample_reparameterized,
    standard_normal,
)
from elbo_kit.divergence import (
    KlEstimate,
    QuadratureSpec,
    bayes_posterior,
    kl_gaussian_closed,
    kl_monte_carlo,
    kl_quadrature_1d,
    kl_vs_standard_normal,
    log_bound_check,
)
from elbo_kit.elbo import (
    ElboBreakdown,
    LinearGaussianModel,
    bound_gap,
    elbo_estimate,
    exact_log_marginal,
    exact_posterior,
)
from elbo_kit.vae import TrainConfig, VaeModel, init_vae, train

__all__ = [
    "DiagonalGaussian",
    "ElboBreakdown",
    "KlEstimate",
    "LatentSample",
    "LinearGaussianModel",
    "QuadratureSpec",
    "RngState",
    "TrainConfig",
    "VaeModel",
    "bayes_posterior",
    "bound_gap",
    "elbo_estimate",
    "exact_log_marginal",
    "exact_posterior",
    "information_content",
    "init_vae",
    "kl_gaussian_closed",
    "kl_monte_carlo",
    "kl_quadrature_1d",
    "kl_vs_standard_normal",
    "log_bound_check",
    "log_pdf",
    "log_pdf_batch",
    "sample_reparameterized",
    "standard_normal",
    "train",
]
