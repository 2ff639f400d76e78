"""psBART: smooth monotone tree-ensemble regression with coarsened-response
imputation, plus the accompanying simulation harness."""

__version__ = "0.1.0"

from .data import (  # noqa: F401
    CovariateColumn,
    Dataset,
    IngestionConfig,
    Observation,
    Standardization,
    TargetMesh,
    compute_gamma,
    load_dataset,
    standardize_response,
)
from .gp import GPConfig, KernelCache, kernel_matrix, sample_prior_leaf  # noqa: F401
from .projection import pava, project_draws  # noqa: F401
from .sampler import (  # noqa: F401
    ModelState,
    PosteriorDraws,
    SamplerConfig,
    impute_latent,
    run_mcmc,
    update_sigma2,
)
from .summaries import Profile, centroid_profile, contrast, envelope  # noqa: F401
from .trees import Ensemble, Tree, TreePrior, evaluate, route  # noqa: F401
