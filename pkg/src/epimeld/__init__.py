"""Probabilistic HIV-prevalence projection from antenatal-clinic data.

Calibrates a four-parameter compartmental epidemic model to clinic test
counts by Bayesian melding: uniform input priors, an integrated probit
random-effects likelihood, and sampling-importance-resampling. The
posterior supports population prevalence bands, clinic-level predictive
intervals, and backtests against held-out years.
"""

from ._core import active_backend
from .errors import ConfigError, DataError, InferenceError, QuadratureError
from .likelihood import (
    ClinicObservation,
    Dataset,
    QuadratureConfig,
    SigmaPrior,
    clinic_marginal_logdensity,
    integrated_log_likelihood,
    residuals,
    transform_observation,
)
from .melding import (
    Diagnostics,
    MeldingConfig,
    PosteriorSample,
    WeightedDraw,
    compute_log_weights,
    diagnostics_report,
    resample,
    run_melding,
    weigh_draw,
)
from .model import (
    DemographyConfig,
    EppParams,
    EpidemicState,
    PrevalenceTrajectory,
    SimGrid,
    SurvivalConfig,
    at_risk_fraction,
    chi,
    death_kernel,
    simulate,
    simulate_states,
)
from .predictive import (
    CoverageReport,
    PointPrediction,
    PredictiveDraws,
    PredictiveRequest,
    backtest,
    clinic_effect_logdensity,
    population_quantiles,
    predict_clinic,
    sample_clinic_effect,
    sample_clinic_effects,
)
from .priors import (
    InputPriorConfig,
    OutputConstraint,
    ParamDraws,
    constraint_indicator,
    phi_from_fractions,
    sample_inputs,
)

__version__ = "0.1.0"

__all__ = [
    "ClinicObservation",
    "ConfigError",
    "CoverageReport",
    "DataError",
    "Dataset",
    "DemographyConfig",
    "Diagnostics",
    "EpidemicState",
    "EppParams",
    "InferenceError",
    "InputPriorConfig",
    "MeldingConfig",
    "OutputConstraint",
    "ParamDraws",
    "PointPrediction",
    "PosteriorSample",
    "PredictiveDraws",
    "PredictiveRequest",
    "PrevalenceTrajectory",
    "QuadratureConfig",
    "QuadratureError",
    "SigmaPrior",
    "SimGrid",
    "SurvivalConfig",
    "WeightedDraw",
    "active_backend",
    "at_risk_fraction",
    "backtest",
    "chi",
    "clinic_effect_logdensity",
    "clinic_marginal_logdensity",
    "compute_log_weights",
    "constraint_indicator",
    "death_kernel",
    "diagnostics_report",
    "integrated_log_likelihood",
    "phi_from_fractions",
    "population_quantiles",
    "predict_clinic",
    "resample",
    "residuals",
    "run_melding",
    "sample_clinic_effect",
    "sample_clinic_effects",
    "sample_inputs",
    "simulate",
    "simulate_states",
    "transform_observation",
    "weigh_draw",
    "__version__",
]
