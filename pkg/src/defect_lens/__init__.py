"""Selection-bias diagnostics for survey estimates checked against benchmark data."""

__version__ = "0.1.0"

from .decomp import (
    DEFAULT_FACTORS,
    BenchmarkPoint,
    Decomposition,
    SurveySnapshot,
    decompose,
    effective_sample_size_approx,
    effective_sample_size_exact,
    finite_population_moments,
    mse_srs,
    sensitivity_sweep,
)

__all__ = [
    "DEFAULT_FACTORS",
    "BenchmarkPoint",
    "Decomposition",
    "SurveySnapshot",
    "decompose",
    "effective_sample_size_approx",
    "effective_sample_size_exact",
    "finite_population_moments",
    "mse_srs",
    "sensitivity_sweep",
]
