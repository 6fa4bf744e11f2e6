"""Experiment runner, statistical checks and the reference oracle."""

from .checks import CheckResult, run_checks
from .reference import first_divergence, reference_allocate
from .runner import ExperimentSpec, run_experiment

__all__ = ["CheckResult", "ExperimentSpec", "first_divergence", "reference_allocate",
           "run_checks", "run_experiment"]
