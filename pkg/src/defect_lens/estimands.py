"""Effective sample sizes for successive-difference and subgroup-difference estimands.

Both SRS samples behind the difference estimands are taken to have equal size
and to be independent across waves; the population size is constant across
waves unless overridden.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional

from .decomp import (
    BenchmarkPoint,
    Decomposition,
    SurveySnapshot,
    effective_sample_size_approx,
    effective_sample_size_exact,
)

__all__ = [
    "WavePair",
    "SubgroupTable",
    "diff_error",
    "diff_neff",
    "diff_neff_decomposed",
    "reldiff_error",
    "reldiff_error_decomposed",
    "reldiff_neff",
    "reldiff_neff_decomposed",
    "subgroup_sigma",
    "subgroup_decompose",
]

SigmaMethod = Literal["paper", "exact"]


@dataclass(frozen=True)
class WavePair:
    prev_survey: SurveySnapshot
    prev_bench: BenchmarkPoint
    curr_survey: SurveySnapshot
    curr_bench: BenchmarkPoint
    population_size: Optional[int] = None

    def __post_init__(self) -> None:
        d0 = self.prev_survey.date or self.prev_bench.date
        d1 = self.curr_survey.date or self.curr_bench.date
        if d0 is not None and d1 is not None and not d0 < d1:
            raise ValueError(f"wave dates must increase: {d0} !< {d1}")
        if self.prev_bench.sigma <= 0 or self.curr_bench.sigma <= 0:
            raise ValueError("both benchmarks need population_sd > 0")

    @property
    def N(self) -> int:
        """Population size used by the exact forms (defaults to the previous wave's)."""
        if self.population_size is not None:
            return self.population_size
        return self.prev_bench.population_size

    @property
    def variance_sum(self) -> float:
        return self.prev_bench.sigma**2 + self.curr_bench.sigma**2


def _inv_sq(num: float, err: float) -> float:
    if err == 0:
        return math.inf
    return num / (err * err)


def _wave_error(survey: SurveySnapshot, bench: BenchmarkPoint, ddc: float) -> float:
    n, N = survey.sample_size, bench.population_size
    if not 0 < n < N:
        raise ValueError(f"need 0 < n < N, got n={n}, N={N}")
    return ddc * math.sqrt((N - n) / n) * bench.sigma


def diff_error(pair: WavePair) -> float:
    """Error of the survey's wave-to-wave change against the benchmark change."""
    survey_diff = pair.curr_survey.sample_mean - pair.prev_survey.sample_mean
    bench_diff = pair.curr_bench.population_mean - pair.prev_bench.population_mean
    return survey_diff - bench_diff


def diff_neff(pair: WavePair, exact: bool = False) -> float:
    """Effective sample size of the successive difference.

    The default is the large-N form ``(s0^2 + s1^2) / err^2``.  With
    ``exact=True`` the finite-population version is used:
    ``S N/(N-1) / (S/(N-1) + err^2)``.
    """
    err = diff_error(pair)
    s = pair.variance_sum
    if not exact:
        return _inv_sq(s, err)
    N = pair.N
    return s * N / (N - 1) / (s / (N - 1) + err * err)


def diff_neff_decomposed(ddc_prev: float, ddc_curr: float, pair: WavePair) -> float:
    """:func:`diff_neff` with the error written through per-wave ddcs."""
    err = _wave_error(pair.curr_survey, pair.curr_bench, ddc_curr) - _wave_error(
        pair.prev_survey, pair.prev_bench, ddc_prev
    )
    return _inv_sq(pair.variance_sum, err)


def _check_prev_means(pair: WavePair) -> None:
    if pair.prev_bench.population_mean == 0 or pair.prev_survey.sample_mean == 0:
        raise ValueError("relative difference undefined: previous-wave mean is zero")


def reldiff_error(pair: WavePair) -> float:
    """Error of the survey's relative change against the benchmark relative change."""
    _check_prev_means(pair)
    y0n, y1n = pair.prev_survey.sample_mean, pair.curr_survey.sample_mean
    y0, y1 = pair.prev_bench.population_mean, pair.curr_bench.population_mean
    return (y1n - y0n) / y0n - (y1 - y0) / y0


def _reldiff_numerator(pair: WavePair) -> float:
    y0, y1 = pair.prev_bench.population_mean, pair.curr_bench.population_mean
    if y1 == 0:
        raise ValueError("relative difference undefined: current benchmark mean is zero")
    s0, s1 = pair.prev_bench.sigma, pair.curr_bench.sigma
    return s0**2 / y0**2 + s1**2 / y1**2


def reldiff_neff(pair: WavePair) -> float:
    """Effective sample size of the relative successive difference (delta method)."""
    err = reldiff_error(pair)
    ratio = pair.curr_bench.population_mean / pair.prev_bench.population_mean
    return _inv_sq(ratio**2 * _reldiff_numerator(pair), err)


def _relative_terms(ddc_prev: float, ddc_curr: float, pair: WavePair) -> tuple[float, float]:
    u0 = _wave_error(pair.prev_survey, pair.prev_bench, ddc_prev) / pair.prev_bench.population_mean
    u1 = _wave_error(pair.curr_survey, pair.curr_bench, ddc_curr) / pair.curr_bench.population_mean
    return u0, u1


def reldiff_error_decomposed(ddc_prev: float, ddc_curr: float, pair: WavePair) -> float:
    """Second-order Taylor expression of the relative-difference error.

    With ``u_t = ddc_t * deficiency_t * sd_t / mean_t`` this is
    ``(mean_1 / mean_0) * (u_1 - u_0) * (1 - u_0)``.  The exact error has
    ``1 / (1 + u_0)`` in place of ``1 - u_0``; the gap is
    ``u_0^2 / (1 + u_0)`` relative.
    """
    _check_prev_means(pair)
    u0, u1 = _relative_terms(ddc_prev, ddc_curr, pair)
    ratio = pair.curr_bench.population_mean / pair.prev_bench.population_mean
    return ratio * (u1 - u0) * (1.0 - u0)


def reldiff_neff_decomposed(ddc_prev: float, ddc_curr: float, pair: WavePair) -> float:
    _check_prev_means(pair)
    u0, u1 = _relative_terms(ddc_prev, ddc_curr, pair)
    return _inv_sq(_reldiff_numerator(pair), (u1 - u0) * (1.0 - u0))


@dataclass(frozen=True)
class SubgroupTable:
    """Joint population proportions of (Y, G) plus the survey's per-group results.

    Group I has ``G = 0`` and group II has ``G = 1``.  ``pYG`` is the share of
    the population with ``Y = y`` and ``G = g``.
    """

    p11: float
    p10: float
    p01: float
    p00: float
    group_sizes: tuple[int, int]
    sample_sizes: tuple[int, int]
    sample_means: tuple[float, float]

    def __post_init__(self) -> None:
        cells = (self.p11, self.p10, self.p01, self.p00)
        if min(cells) < 0:
            raise ValueError("joint proportions must be non-negative")
        if abs(sum(cells) - 1.0) > 1e-12:
            raise ValueError(f"joint proportions sum to {sum(cells)!r}, not 1")
        if min(self.group_sizes) < 1 or min(self.sample_sizes) < 1:
            raise ValueError("group and sample sizes must be positive")

    @classmethod
    def from_margins(
        cls,
        y_mean: float,
        g_mean: float,
        p11: float,
        group_sizes: tuple[int, int],
        sample_sizes: tuple[int, int],
        sample_means: tuple[float, float],
    ) -> "SubgroupTable":
        p10 = y_mean - p11
        p01 = g_mean - p11
        p00 = 1.0 - p11 - p10 - p01
        return cls(p11, p10, p01, p00, group_sizes, sample_sizes, sample_means)

    @property
    def y_mean(self) -> float:
        return self.p11 + self.p10

    @property
    def g_mean(self) -> float:
        return self.p11 + self.p01

    @property
    def N(self) -> int:
        return self.group_sizes[0] + self.group_sizes[1]

    @property
    def n(self) -> int:
        return self.sample_sizes[0] + self.sample_sizes[1]

    @property
    def survey_gap(self) -> float:
        """Survey mean of group II minus that of group I."""
        return self.sample_means[1] - self.sample_means[0]


def subgroup_sigma(table: SubgroupTable, method: SigmaMethod = "exact") -> float:
    """Standard deviation of the signed subgroup outcome ``Y* = Y*G - Y*(1-G)``.

    ``exact``: ``Y*`` takes values +1, -1, 0 with probabilities p11, p10 and
    the rest, so ``Var = (p11 + p10) - (p11 - p10)^2``.

    ``paper``: ``y(1-y) + 4 g(1-g) + 4 (p11 - y g)`` with ``y``, ``g`` the
    Y and G margins.  That is ``Var(Y + 2G)``, which does not agree with the
    exact variance in general (1.4375 vs 0.4375 for the table 3/8, 1/8, 2/8,
    2/8); it is kept for reproducing published figures.
    """
    if method == "exact":
        var = (table.p11 + table.p10) - (table.p11 - table.p10) ** 2
        return math.sqrt(max(var, 0.0))
    if method == "paper":
        y, g = table.y_mean, table.g_mean
        var = y * (1 - y) + 4 * g * (1 - g) + 4 * (table.p11 - y * g)
        if var < 0:
            raise ValueError("paper variance formula negative")
        return math.sqrt(var)
    raise ValueError(f"unknown sigma method {method!r}")


def subgroup_decompose(
    table: SubgroupTable, bench_gap: float, sigma_method: SigmaMethod = "exact"
) -> Decomposition:
    """Decompose the subgroup-gap error ``survey_gap - bench_gap``.

    The decomposition identity holds exactly when both gaps are means of
    ``Y*`` (group sums divided by the combined size); with within-group means
    it is the plug-in reading used for published figures.
    """
    n, N = table.n, table.N
    if not n < N:
        raise ValueError(f"combined sample size {n} must be below population size {N}")
    sigma = subgroup_sigma(table, sigma_method)
    if sigma == 0:
        raise ValueError("degenerate subgroup variance: ddc undefined")
    error = table.survey_gap - bench_gap
    deficiency = math.sqrt((N - n) / n)
    ddc = error / (deficiency * sigma)
    return Decomposition(
        estimation_error=error,
        ddc=ddc,
        data_deficiency=deficiency,
        problem_difficulty=sigma,
        n_eff_approx=effective_sample_size_approx(ddc, n, N),
        n_eff_exact=effective_sample_size_exact(ddc, n, N),
        sample_size=n,
        population_size=N,
    )
