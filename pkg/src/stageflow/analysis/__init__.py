"""Measurement suite: divergence profiles, boundary search, metrics and sweeps."""

from .boundaries import (
    BoundaryReport,
    LateSweep,
    SimilarityCurve,
    argmin_v_shape,
    choose_boundaries,
    early_boundary_curve,
    find_knee,
    find_knee_curve,
    find_threshold_boundary,
    late_boundary_sweep,
)
from .divergence import DivergenceCurve, velocity_divergence_profile, write_divergence_csv
from .metrics import (
    endpoint_similarity,
    energy_distance,
    fit_gaussian,
    frechet_from_samples,
    frechet_gaussian,
    pareto_front,
)
from .sweep import MetricsReport, evaluate_schedules, schedule_sweep, sweep_pareto, write_sweep_csv

__all__ = [
    "BoundaryReport",
    "DivergenceCurve",
    "LateSweep",
    "MetricsReport",
    "SimilarityCurve",
    "argmin_v_shape",
    "choose_boundaries",
    "early_boundary_curve",
    "endpoint_similarity",
    "evaluate_schedules",
    "energy_distance",
    "find_knee",
    "find_knee_curve",
    "find_threshold_boundary",
    "fit_gaussian",
    "frechet_from_samples",
    "frechet_gaussian",
    "late_boundary_sweep",
    "pareto_front",
    "schedule_sweep",
    "sweep_pareto",
    "velocity_divergence_profile",
    "write_divergence_csv",
    "write_sweep_csv",
]
