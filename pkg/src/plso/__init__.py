"""Piecewise locally stationary oscillator decomposition of time series."""

from plso.apg import (
    ApgConfig,
    ApgTrace,
    FitDiagnostics,
    apg_fit_psi,
    block_coordinate_fit,
    prox_smoothness,
    refine_theta,
)
from plso.errors import DataError, NumericalError, SchemaVersionError
from plso.kalman import (
    PhaseEstimate,
    PosteriorTrajectories,
    SampleEnsemble,
    ffbs_sample,
    heldout_loglik,
    kalman_filter,
    kalman_smooth,
    phase_estimate,
    reconstruct_component,
)
from plso.models import (
    STATIONARY,
    LatentTrajectory,
    LogVarianceField,
    ModelParams,
    Periodogram,
    SpectrumGrid,
)
from plso.oscillator import (
    autocovariance,
    component_spectrum,
    psd,
    simulate_generative,
    transition_covariance,
)
from plso.selection import (
    SelectionConfig,
    SelectionReport,
    aic,
    cross_validate_lambda,
    estimate_obs_noise,
    initialize,
    select_j,
    select_model,
)
from plso.simulation import (
    BenchmarkResult,
    ExperimentSpec,
    MetricsReport,
    SimulationBundle,
    independent_window_smooth,
    is_divergence,
    jump_metric,
    match_components,
    mse_metric,
    run_benchmark,
    simulate_experiment,
)
from plso.whittle import (
    evaluate_objective,
    grad_loglik,
    lipschitz_bound,
    log_prior,
    model_psd,
    periodogram,
    whittle_loglik,
)

__all__ = [
    "ModelParams",
    "LogVarianceField",
    "LatentTrajectory",
    "SpectrumGrid",
    "Periodogram",
    "STATIONARY",
    "autocovariance",
    "component_spectrum",
    "psd",
    "transition_covariance",
    "simulate_generative",
    "periodogram",
    "whittle_loglik",
    "log_prior",
    "grad_loglik",
    "lipschitz_bound",
    "model_psd",
    "evaluate_objective",
    "ApgConfig",
    "ApgTrace",
    "FitDiagnostics",
    "prox_smoothness",
    "apg_fit_psi",
    "refine_theta",
    "block_coordinate_fit",
    "PosteriorTrajectories",
    "SampleEnsemble",
    "PhaseEstimate",
    "kalman_filter",
    "kalman_smooth",
    "heldout_loglik",
    "reconstruct_component",
    "ffbs_sample",
    "phase_estimate",
    "SelectionConfig",
    "SelectionReport",
    "estimate_obs_noise",
    "initialize",
    "aic",
    "select_j",
    "cross_validate_lambda",
    "select_model",
    "ExperimentSpec",
    "SimulationBundle",
    "MetricsReport",
    "BenchmarkResult",
    "simulate_experiment",
    "jump_metric",
    "mse_metric",
    "is_divergence",
    "match_components",
    "independent_window_smooth",
    "run_benchmark",
    "DataError",
    "NumericalError",
    "SchemaVersionError",
    "__version__",
]

# DO NOT EDIT THE VERSION MANUALLY, USE bump-my-version TO UPDATE. See release.md
__version__ = "0.1.0"
