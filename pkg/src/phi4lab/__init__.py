"""Cutoff phi^4 fields on the unit cube: covariances, samplers, Wick observables,
renormalization schedules, large-deviation tools and partition-function experiments."""

from .errors import (CapacityError, DomainError, InconclusiveTrend, InputError, IntegrityError, NumericError,
                     Phi4LabError)
from .spectral import (CovarianceProfile, MollifierSpec, ScalingFit, covariance_at, covariance_power_integral,
                       covariance_profile, gradient_variance, ratio_drift, scaling_fit, variance)
from .sampler import CutoffConfig, FieldSample, sample_field
from .wick import CellObservables, compute_observables, exact_moments, wick_power
from .schedules import PRESETS, CouplingSet, RenormSchedule, classify_case, get_schedule, schedule_eval
from .ldp import (FiniteDistribution, empirical_cgf, exact_cgf, i_projection, kl_divergence, legendre_transform)
from .lab import (DensityStats, LogPartitionEstimate, case_experiment, density_statistics, estimate_log_partition,
                  lln_sweep)
from .config import RunConfig, parse_config

__all__ = [name for name in dir() if not name.startswith("_")]
