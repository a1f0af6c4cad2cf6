"""Simulation and nonparametric estimation for second-order jump-diffusions.

The observable coordinate Y integrates a latent jump-diffusion state X
(dY = X dt). From integrated observations Y at a fixed sampling step the
toolkit reconstructs the state by difference quotients, computes kernel
regression estimators of the drift and the second infinitesimal moment,
and validates the estimators' conditional-moment foundations and limit
behaviour by Monte Carlo.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ExpansionUnstableError,
    ExplosionError,
    InsufficientDataError,
    NoDataNearPointError,
    NumericError,
    QuadratureError,
    SojdError,
    ValidationError,
)
from .models import (
    AssumptionFlags,
    JumpField,
    LevyDensity,
    MarkSampler,
    ModelSpec,
    PRESETS,
    ScalarField,
    cir_jump,
    jump_moment,
    make_model,
    ou_jump,
)
from .kernels import (
    CLI_KERNELS,
    KernelSpec,
    default_bandwidth,
    epanechnikov,
    gaussian,
    get_kernel,
    kernel_eval,
    kernel_k2,
    make_kernel,
    quartic,
)
from .simulate import (
    EnsemblePaths,
    FinePath,
    ObservationSet,
    SimConfig,
    observe,
    simulate_ensemble,
    simulate_path,
)
from .estimators import (
    EstimateResult,
    asymptotic_variance,
    estimate_on_grid,
    nw_baseline,
    nw_density,
    nw_drift,
    nw_second,
)
from .generator import (
    AppendixReport,
    ExpansionResult,
    RelationCheck,
    TestFunction,
    apply_generator,
    expand_conditional,
    verify_appendix_terms,
    verify_relation_33,
    verify_relation_34,
)
from .harness import (
    ExperimentConfig,
    ExperimentReport,
    LadderRung,
    dataset_ensemble,
    invariant_density_fn,
    run_consistency,
    run_normality,
    stationary_density,
    stationary_samples,
    summarize,
)

__all__ = [name for name in dir() if not name.startswith("_")]
