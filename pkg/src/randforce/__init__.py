"""Particle motion in a random Poisson force field, and its diffusive limits."""
__version__ = "0.1.0"

from .field import BumpFamily, BumpProfile, FieldInstance, StaticField
from .dynamics import (IntegratorConfig, Trajectory, near_self_intersection_scan, simulate_renewal,
                       simulate_X)
from .limit_sde import (DiffusionParams, LimitLaw, em_step_energy, em_step_v, exact_energy_sample,
                        limit_cdf, limit_density, self_similarity_transform)
from .covariance import CovarianceEstimate, estimate_sigma_lambda, sigma_lambda_quadrature
from .harness import (CsiViolation, EnsembleConfig, EnsembleReport, compare_particle_to_limit,
                      fit_power_law, ks_statistic, run_ensemble)

__all__ = [
    "BumpFamily", "BumpProfile", "FieldInstance", "StaticField",
    "IntegratorConfig", "Trajectory", "simulate_X", "simulate_renewal", "near_self_intersection_scan",
    "DiffusionParams", "LimitLaw", "em_step_v", "em_step_energy", "exact_energy_sample",
    "limit_density", "limit_cdf", "self_similarity_transform",
    "CovarianceEstimate", "estimate_sigma_lambda", "sigma_lambda_quadrature",
    "EnsembleConfig", "EnsembleReport", "run_ensemble", "compare_particle_to_limit", "fit_power_law",
    "ks_statistic", "CsiViolation",
]
