"""Bayesian GLMs and GLMMs with classical or Berkson covariate measurement error.

The package fits jointly specified regression / exposure / error models by a
deterministic nested Gaussian approximation over a hyperparameter grid, by an
independent MCMC sampler, or naively (ignoring the error), and ships prior
elicitation helpers, closed-form conditionals, and synthetic study generators.
"""
from __future__ import annotations

from .approx import (
    IntegrationGrid,
    PosteriorMarginal,
    explore_grid,
    hyper_marginal,
    latent_marginal,
    latent_marginals,
    log_hyperposterior,
)
from .closedforms import (
    NaiveFit,
    attenuation_factor,
    meb_conditional,
    mec_conditional,
    mec_marginal_w,
    mec_scaled_conditional,
    naive_glm_fit,
)
from .data import Dataset, parse_model_config, read_model_config
from .elicit import (
    GammaFit,
    LogNormalFit,
    berkson_sigma_from_interval,
    gamma_from_mean_equal_variance,
    gamma_from_quantiles,
    lognormal_from_quantiles,
    precision_from_uniform_range,
)
from .errors import DataError, MeglmError, NumericError, SpecError
from .gaussian import (
    GaussianApprox,
    exact_linear_gaussian_posterior,
    latent_gaussian_approx,
)
from .mcmc import (
    ChainConfig,
    ChainOutput,
    effective_sample_size,
    run_chain,
)
from .model import (
    DEFAULT_COPY_PRECISION,
    JointModel,
    ModelSpec,
    build_joint_model,
    copy_augment,
    joint_log_density,
    naive_spec,
)
from .report import (
    PosteriorReport,
    RunConfig,
    laplace_marginals,
    mcmc_marginals,
    naive_marginals,
    run_fit,
)
from .studies import (
    FraminghamRecipe,
    GroundTruth,
    IbexRecipe,
    SeedlingRecipe,
    SimulatedStudy,
    make_recipe,
    simulate_study,
    write_study,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "MeglmError",
    "SpecError",
    "DataError",
    "NumericError",
    "Dataset",
    "parse_model_config",
    "read_model_config",
    "ModelSpec",
    "JointModel",
    "build_joint_model",
    "copy_augment",
    "naive_spec",
    "joint_log_density",
    "DEFAULT_COPY_PRECISION",
    "GaussianApprox",
    "latent_gaussian_approx",
    "exact_linear_gaussian_posterior",
    "IntegrationGrid",
    "PosteriorMarginal",
    "explore_grid",
    "log_hyperposterior",
    "latent_marginal",
    "latent_marginals",
    "hyper_marginal",
    "ChainConfig",
    "ChainOutput",
    "run_chain",
    "effective_sample_size",
    "NaiveFit",
    "naive_glm_fit",
    "mec_conditional",
    "mec_marginal_w",
    "mec_scaled_conditional",
    "meb_conditional",
    "attenuation_factor",
    "GammaFit",
    "LogNormalFit",
    "gamma_from_quantiles",
    "lognormal_from_quantiles",
    "precision_from_uniform_range",
    "berkson_sigma_from_interval",
    "gamma_from_mean_equal_variance",
    "IbexRecipe",
    "FraminghamRecipe",
    "SeedlingRecipe",
    "GroundTruth",
    "SimulatedStudy",
    "make_recipe",
    "simulate_study",
    "write_study",
    "RunConfig",
    "PosteriorReport",
    "naive_marginals",
    "laplace_marginals",
    "mcmc_marginals",
    "run_fit",
]
