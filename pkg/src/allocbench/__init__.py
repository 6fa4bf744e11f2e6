"""Balanced allocation of balls into bins: the IDEA allocator, classic
baselines, weighted, multidimensional and parallel variants, and a
benchmark harness that checks their statistical behaviour."""

from .core import (AllocationOutcome, Algorithm, BinState, ConfigError, GapReport, Mode,
                   SimConfig, TraceRecord, Variant, WeightModel, WeightShape, choose_candidates,
                   estimated_gap, gap_report, merge_reports)
from .engine import RunResult, simulate
from .rng import Rng, derive_seed

__version__ = "0.1.0"

__all__ = [
    "AllocationOutcome", "Algorithm", "BinState", "ConfigError", "GapReport", "Mode",
    "RunResult", "Rng", "SimConfig", "TraceRecord", "Variant", "WeightModel", "WeightShape",
    "choose_candidates", "derive_seed", "estimated_gap", "gap_report", "merge_reports",
    "simulate",
]
