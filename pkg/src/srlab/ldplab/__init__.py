"""Experiment harness for the small-noise limits of hypoelliptic bridges."""

from .config import DEFAULT_TOLERANCES, ExperimentConfig, load_config
from .experiments import (
    EXPERIMENTS,
    detour_path,
    fit_limit,
    midpoint_pvalues,
    run_concentration,
    run_experiment,
    run_leandre,
    run_reversal,
    run_tightness,
    run_tube,
    sup_distance,
)
from .report import EXIT_CODES, Estimate, ExperimentReport, Fit, dumps_report, emit_report, loads_report

__all__ = [
    "DEFAULT_TOLERANCES",
    "EXIT_CODES",
    "EXPERIMENTS",
    "Estimate",
    "ExperimentConfig",
    "ExperimentReport",
    "Fit",
    "detour_path",
    "dumps_report",
    "emit_report",
    "fit_limit",
    "load_config",
    "loads_report",
    "midpoint_pvalues",
    "run_concentration",
    "run_experiment",
    "run_leandre",
    "run_reversal",
    "run_tightness",
    "run_tube",
    "sup_distance",
]
