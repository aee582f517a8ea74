"""Robust minimum density power divergence estimation for interval-monitored
simple step-stress life tests under proportional hazards."""

from .characteristics import (
    CharacteristicEstimate,
    NocQuery,
    characteristic_ci,
    characterize,
    hazard_rate_at,
    mean_lifetime,
    mean_lifetime_gradient,
    quantile,
    quantile_gradient,
    reliability_at,
)
from .estimation import (
    FitOptions,
    FitResult,
    GroupedCounts,
    asymptotic_covariance,
    beta_score,
    dpd_loss,
    empirical_probs,
    fit_mdpde,
    wald_ci,
)
from .model import (
    BaselineHazard,
    ModelParams,
    NumericalError,
    StepStressDesign,
    acceleration_factor,
    baseline_hazard,
    cell_prob_jacobian,
    cell_probabilities,
    cumulative_hazard,
    shifting_time,
    step_reliability,
)
from .simulation import (
    ContaminationSpec,
    MonteCarloReport,
    SimulationConfig,
    adjusted_residuals,
    generate_counts,
    rmse_study,
)

__version__ = "0.1.0"
