"""Three-way error decomposition of a survey mean and the effective sample size.

The estimation error of a sample mean against a known population mean is the
product of the data defect correlation (ddc), the data deficiency
``sqrt((N - n) / n)`` and the population standard deviation.  Given a
benchmark, the ddc is recovered by plugging the other three quantities in.

All population moments use denominator ``N``; the decomposition identity is
exact only under that convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from datetime import date
from typing import Iterable, Optional, Sequence

__all__ = [
    "BenchmarkPoint",
    "SurveySnapshot",
    "Decomposition",
    "DEFAULT_FACTORS",
    "finite_population_moments",
    "decompose",
    "effective_sample_size_approx",
    "effective_sample_size_exact",
    "mse_srs",
    "sensitivity_sweep",
]

DEFAULT_FACTORS: tuple[float, ...] = (0.9, 0.95, 1.0, 1.05, 1.1)


@dataclass(frozen=True)
class BenchmarkPoint:
    """Gold-standard population quantities at one date.

    ``population_sd`` may be omitted for binary outcomes, in which case it is
    derived as ``sqrt(p * (1 - p))`` from ``population_mean``.
    """

    date: Optional[date]
    population_size: int
    population_mean: float
    population_sd: Optional[float] = None
    binary: bool = True

    def __post_init__(self) -> None:
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if not math.isfinite(self.population_mean):
            raise ValueError("population_mean must be finite")
        if self.binary and not 0.0 <= self.population_mean <= 1.0:
            raise ValueError(
                f"binary population_mean {self.population_mean!r} outside [0, 1]"
            )
        if self.population_sd is None:
            if not self.binary:
                raise ValueError("population_sd is required for continuous outcomes")
            p = self.population_mean
            object.__setattr__(self, "population_sd", math.sqrt(p * (1.0 - p)))
        elif self.population_sd < 0 or not math.isfinite(self.population_sd):
            raise ValueError("population_sd must be a non-negative finite number")

    @property
    def sigma(self) -> float:
        return float(self.population_sd)  # type: ignore[arg-type]

    def scaled(self, factor: float) -> "BenchmarkPoint":
        """Benchmark with the mean multiplied by ``factor``.

        For binary outcomes the SD is re-derived from the scaled mean; for
        continuous outcomes it is kept.
        """
        mean = self.population_mean * factor
        if self.binary:
            if not 0.0 <= mean <= 1.0:
                raise ValueError(
                    f"sensitivity factor {factor!r} puts the benchmark mean at "
                    f"{mean!r}, outside [0, 1]"
                )
            return replace(self, population_mean=mean, population_sd=None)
        return replace(self, population_mean=mean)


@dataclass(frozen=True)
class SurveySnapshot:
    """Sample size and (weighted) sample mean of one survey at one date."""

    date: Optional[date]
    sample_size: int
    sample_mean: float
    label: str = ""
    binary: bool = True

    def __post_init__(self) -> None:
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        if not math.isfinite(self.sample_mean):
            raise ValueError("sample_mean must be finite")
        if self.binary and not 0.0 <= self.sample_mean <= 1.0:
            raise ValueError(f"binary sample_mean {self.sample_mean!r} outside [0, 1]")


@dataclass(frozen=True)
class Decomposition:
    """One evaluated decomposition.

    ``n_eff_approx`` and ``n_eff_exact`` are ``math.inf`` when the ddc is zero.
    """

    estimation_error: float
    ddc: float
    data_deficiency: float
    problem_difficulty: float
    n_eff_approx: float
    n_eff_exact: float
    sensitivity_factor: float = 1.0
    date: Optional[date] = None
    sample_size: Optional[int] = None
    population_size: Optional[int] = None

    @property
    def identity_residual(self) -> float:
        return self.estimation_error - (
            self.ddc * self.data_deficiency * self.problem_difficulty
        )


def finite_population_moments(values: Iterable[float]) -> tuple[float, float]:
    """Mean and denominator-N standard deviation of a finite population."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("empty population")
    n = len(vals)
    mean = math.fsum(vals) / n
    var = math.fsum((v - mean) ** 2 for v in vals) / n
    return mean, math.sqrt(var)


def _check_sizes(n: int, N: int) -> None:
    if n < 1:
        raise ValueError(f"sample size must be positive, got {n}")
    if n >= N:
        raise ValueError(f"sample size {n} must be smaller than population size {N}")


def _neff_core(ddc: float, n: int, N: int) -> float:
    if ddc == 0:
        return math.inf
    return (n / (N - n)) / (ddc * ddc)


def effective_sample_size_approx(ddc: float, n: int, N: int) -> float:
    """Large-N effective sample size ``n / (N - n) / ddc**2``; ``inf`` for ddc 0."""
    _check_sizes(n, N)
    return _neff_core(ddc, n, N)


def effective_sample_size_exact(ddc: float, n: int, N: int) -> float:
    """Effective sample size obtained by equating the biased-sample MSE with SRS MSE.

    With ``A = n / (N - n) / ddc**2`` this is ``A / ((A - 1) / N + 1)``,
    which never exceeds ``N`` and tends to ``A`` as ``N`` grows.
    """
    _check_sizes(n, N)
    a = _neff_core(ddc, n, N)
    if math.isinf(a):
        return math.inf
    return a / ((a - 1.0) / N + 1.0)


def mse_srs(n_eff: float, N: int, sigma: float) -> float:
    """MSE of the mean of a simple random sample of size ``n_eff`` without replacement."""
    if not 0 < n_eff <= N:
        raise ValueError(f"n_eff must lie in (0, N={N}], got {n_eff}")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if N == 1:
        return 0.0
    return (N - n_eff) / n_eff * sigma * sigma / (N - 1)


def decompose(
    survey: SurveySnapshot, bench: BenchmarkPoint, sensitivity_factor: float = 1.0
) -> Decomposition:
    """Decompose ``survey.sample_mean - bench.population_mean`` into its three factors.

    The ddc is the plug-in value ``error / (deficiency * difficulty)``.
    ``sensitivity_factor`` is only recorded; scale the benchmark beforehand
    (see :func:`sensitivity_sweep`).
    """
    n, N = survey.sample_size, bench.population_size
    if n == N:
        raise ValueError("census: deficiency zero")
    _check_sizes(n, N)
    sigma = bench.sigma
    if sigma == 0:
        raise ValueError("degenerate benchmark: ddc undefined")
    error = survey.sample_mean - bench.population_mean
    deficiency = math.sqrt((N - n) / n)
    ddc = error / (deficiency * sigma)
    return Decomposition(
        estimation_error=error,
        ddc=ddc,
        data_deficiency=deficiency,
        problem_difficulty=sigma,
        n_eff_approx=effective_sample_size_approx(ddc, n, N),
        n_eff_exact=effective_sample_size_exact(ddc, n, N),
        sensitivity_factor=sensitivity_factor,
        date=survey.date if survey.date is not None else bench.date,
        sample_size=n,
        population_size=N,
    )


def sensitivity_sweep(
    survey: SurveySnapshot,
    bench: BenchmarkPoint,
    factors: Sequence[float] = DEFAULT_FACTORS,
) -> list[Decomposition]:
    """Re-run :func:`decompose` with the benchmark mean scaled by each factor.

    Out-of-range scaled means raise instead of being clipped.
    """
    out = []
    for f in factors:
        if not f > 0:
            raise ValueError(f"sensitivity factor must be positive, got {f!r}")
        scaled = bench if f == 1.0 else bench.scaled(f)
        out.append(decompose(survey, scaled, sensitivity_factor=float(f)))
    return out
