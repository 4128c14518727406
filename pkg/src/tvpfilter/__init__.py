"""Particle filtering for time-varying parameter estimation in ODE models."""

from .datagen import ObservationSet, build_dataset, corrupt, generate_truth, load_dataset, save_dataset
from .ensemble import (
    Ensemble,
    GaussianNoiseSpec,
    gaussian_draws,
    log_likelihood,
    resample_auxiliary,
    weighted_covariance,
    weighted_mean,
    weighted_quantile,
    weighted_std,
)
from .errors import (
    ConfigurationError,
    CovarianceError,
    DegenerateWeightsError,
    IntegrationError,
    TvpFilterError,
)
from .filters import (
    DriftSpec,
    FilterConfig,
    StepRecord,
    init_ensemble,
    pf_state_step,
    pf_tvp_plus_step,
    pf_tvp_step,
    run_filter,
    shrink_drift,
    sigma_from_logits,
)
from .models import (
    BenchmarkModel,
    ThetaTruth,
    eval_theta,
    logistic_model,
    oscillator_model,
    resolve_model,
)
from .odes import (
    MultistepHistory,
    OdeModel,
    SolverSpec,
    bdf_step,
    finite_difference_jacobian,
    propagate_ensemble,
    propagate_interval,
    rk4_step,
)
from .rng import RngStream

__version__ = "0.1.0"
