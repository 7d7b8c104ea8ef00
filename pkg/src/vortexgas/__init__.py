"""Poisson gas of Brownian vortex filaments: kernels, paths, field sampling and statistics."""

from .brownian import Ball, BrownianPath, DtPolicy, entrance_time, ito_cross_integral, occupation_time, sample_path, stratonovich_cross_integral
from .ensemble import EnsembleRealization, LocalizationWindow, field_at, intensity_mass, sample_ensemble
from .errors import (
    BudgetExceededError,
    DivergentMomentError,
    FitDomainError,
    InvalidArgumentError,
    InvalidFilamentError,
    InvalidSpecError,
    MarginViolationError,
    VortexGasError,
)
from .filament import FilamentParams, longitudinal_increment, velocity_at, velocity_at_many
from .gamma import (
    MultifractalMeasure,
    SampledParams,
    analytic_moment_lower,
    analytic_moment_upper,
    sample_params,
    theoretical_zeta,
    total_mass,
)
from .kernel import MollifierSpec, RadialKernel, charge_profile, kernel_eval, potential_eval
from .streams import RandomStreams

__version__ = "0.1.0"
