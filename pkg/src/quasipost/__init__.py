"""Quasi-posterior inference for generalized linear models.

Only the mean and variance function of the response are specified; the
quasi-likelihood scaled by the dispersion ``psi`` replaces the likelihood in
Bayes' rule.
"""

__version__ = "0.1.0"

from .errors import (
    DegreesOfFreedomError,
    DivergenceError,
    DomainError,
    EvaluationError,
    InitializationError,
    QuadratureError,
    QuasiError,
    ReplicateFailureError,
    SingularInformationError,
    ValidationError,
)
from .estimation import (
    FitResult,
    ScoringConfig,
    coarsening_alpha,
    estimate_dispersion_llb,
    estimate_dispersion_mom,
    fit_mql,
    psi_from_alpha,
)
from .model import (
    Dataset,
    LinkFunction,
    QuasiModel,
    VarianceFunction,
    expected_information,
    mean_vector,
    quasi_loglik,
    quasi_loglik_quadrature,
    quasi_score,
)
from .posterior import (
    ChainSet,
    CredibleSet,
    HierarchySpec,
    LaplaceResult,
    PosteriorSpec,
    Prior,
    SamplerConfig,
    credible_sets,
    diagnostics,
    laplace_approx,
    log_quasi_posterior,
    sample_rwmh,
)
from .simulate import (
    CoverageReport,
    GeneratorSpec,
    generate_grouped_counts,
    generate_het_gaussian,
    generate_rounded_gamma_counts,
    run_coverage_study,
    smse_pearson,
)

