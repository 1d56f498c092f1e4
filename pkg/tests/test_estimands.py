import math
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from defect_lens.decomp import BenchmarkPoint, SurveySnapshot, decompose
from defect_lens.estimands import (
    SubgroupTable,
    WavePair,
    diff_error,
    diff_neff,
    diff_neff_decomposed,
    reldiff_error,
    reldiff_error_decomposed,
    reldiff_neff,
    reldiff_neff_decomposed,
    subgroup_decompose,
    subgroup_sigma,
)
from defect_lens.simlab import FinitePopulation, exact_ddc, subgroup_star, verify_identity

from conftest import brute_pearson

D0, D1 = date(2021, 3, 1), date(2021, 3, 8)


def _pair(y0n, y0, y1n, y1, s0=None, s1=None, n=1000, N=1_090_000, binary=True):
    b0 = BenchmarkPoint(D0, N, y0, s0, binary=binary)
    b1 = BenchmarkPoint(D1, N, y1, s1, binary=binary)
    return WavePair(SurveySnapshot(D0, n, y0n), b0, SurveySnapshot(D1, n, y1n), b1)


# successive difference

def test_diff_neff_hand_value():
    pair = _pair(0.40, 0.40, 0.50, 0.48, 0.5, 0.5, binary=False)
    assert diff_error(pair) == pytest.approx(0.02, abs=1e-15)
    assert diff_neff(pair) == pytest.approx(1250.0, rel=1e-12)


def test_diff_neff_perfect_difference():
    # dyadic values keep the two differences exactly equal
    pair = _pair(0.5, 0.25, 0.75, 0.5, 0.5, 0.5, binary=False)
    assert diff_neff(pair) == math.inf
    assert diff_neff(pair, exact=True) == pytest.approx(pair.N, rel=1e-12)


def test_constant_bias_series():
    # same ddc, sigma, n and N at both waves
    bench0 = BenchmarkPoint(D0, 10_000, 0.25)
    bench1 = BenchmarkPoint(D1, 10_000, 0.75)
    err = 0.01 * math.sqrt((10_000 - 100) / 100) * bench0.sigma
    pair = WavePair(SurveySnapshot(D0, 100, 0.25 + err), bench0, SurveySnapshot(D1, 100, 0.75 + err), bench1)
    assert bench0.sigma == bench1.sigma
    ddc0, ddc1 = decompose(pair.prev_survey, bench0).ddc, decompose(pair.curr_survey, bench1).ddc
    assert ddc0 == pytest.approx(ddc1, rel=1e-12)
    assert diff_neff_decomposed(0.01, 0.01, pair) == math.inf


def test_diff_neff_exact_form_close_for_large_N():
    pair = _pair(0.40, 0.40, 0.50, 0.48, 0.5, 0.5, binary=False)
    approx, exact = diff_neff(pair), diff_neff(pair, exact=True)
    # S N/(N-1) / (S/(N-1) + e^2) -> S/e^2
    S, e2, N = 0.5, 0.02**2, pair.N
    assert exact == pytest.approx(S * N / (N - 1) / (S / (N - 1) + e2), rel=1e-12)
    assert exact < approx
    assert exact == pytest.approx(approx, rel=2e-3)


def test_diff_neff_decomposed_substitution():
    # deficiency sqrt((N - n)/n) = 33 with n = 1000, N = 1_090_000
    pair = _pair(0.4, 0.4, 0.5 + 0.005 * 33 * 0.49, 0.5, 0.49, 0.49, binary=False)
    expected = 2 * 0.49**2 / (0.005 * 33 * 0.49) ** 2
    assert expected == pytest.approx(73.4619, rel=1e-5)
    assert diff_neff_decomposed(0.0, 0.005, pair) == pytest.approx(expected, rel=1e-12)
    assert diff_neff(pair) == pytest.approx(expected, rel=1e-10)


@settings(max_examples=200, deadline=None)
@given(
    y=st.lists(st.floats(0.05, 0.95), min_size=4, max_size=4),
    n=st.integers(10, 5000),
    N=st.integers(10_000, 10**8),
)
def test_two_path_difference(y, n, N):
    y0n, y0, y1n, y1 = y
    pair = _pair(y0n, y0, y1n, y1, n=n, N=N)
    ddc0 = decompose(pair.prev_survey, pair.prev_bench).ddc
    ddc1 = decompose(pair.curr_survey, pair.curr_bench).ddc
    a, b = diff_neff(pair), diff_neff_decomposed(ddc0, ddc1, pair)
    if math.isinf(a):
        return
    assert b == pytest.approx(a, rel=1e-9)


def test_wavepair_invariants():
    b = BenchmarkPoint(None, 100, 0.5)
    with pytest.raises(ValueError, match="increase"):
        WavePair(SurveySnapshot(D1, 10, 0.5), b, SurveySnapshot(D0, 10, 0.5), b)
    with pytest.raises(ValueError):
        WavePair(SurveySnapshot(D0, 10, 0.5), BenchmarkPoint(D0, 100, 1.0), SurveySnapshot(D1, 10, 0.5), b)


def test_population_size_override():
    pair = _pair(0.4, 0.4, 0.5, 0.48, 0.5, 0.5, binary=False)
    assert pair.N == 1_090_000
    other = WavePair(pair.prev_survey, pair.prev_bench, pair.curr_survey, pair.curr_bench, population_size=500)
    assert other.N == 500


# relative difference

def test_reldiff_neff_hand_value():
    # relative diffs 0.30 (survey) and 0.25 (benchmark)
    pair = _pair(0.4, 0.4, 0.52, 0.5, math.sqrt(0.24), 0.5)
    assert reldiff_error(pair) == pytest.approx(0.05, abs=1e-12)
    assert reldiff_neff(pair) == pytest.approx(1.25**2 * (1.5 + 1.0) / 0.0025, rel=1e-9)
    assert reldiff_neff(pair) == pytest.approx(1562.5, rel=1e-9)


def test_reldiff_perfect():
    pair = _pair(0.25, 0.5, 0.375, 0.75)
    assert reldiff_error(pair) == 0.0
    assert reldiff_neff(pair) == math.inf


def test_reldiff_zero_previous_mean():
    b0 = BenchmarkPoint(D0, 1000, 0.0, 0.3, binary=False)
    b1 = BenchmarkPoint(D1, 1000, 0.5)
    pair = WavePair(SurveySnapshot(D0, 10, 0.1), b0, SurveySnapshot(D1, 10, 0.5), b1)
    with pytest.raises(ValueError, match="relative difference undefined"):
        reldiff_neff(pair)
    with pytest.raises(ValueError, match="relative difference undefined"):
        reldiff_error_decomposed(0.0, 0.0, pair)


def _exact_relative_error(pair, ddc0, ddc1):
    # direct evaluation from reconstructed means
    y0, y1 = pair.prev_bench.population_mean, pair.curr_bench.population_mean
    e0 = ddc0 * math.sqrt((pair.N - pair.prev_survey.sample_size) / pair.prev_survey.sample_size) * pair.prev_bench.sigma
    e1 = ddc1 * math.sqrt((pair.N - pair.curr_survey.sample_size) / pair.curr_survey.sample_size) * pair.curr_bench.sigma
    return (y1 + e1) / (y0 + e0) - y1 / y0


@settings(max_examples=200, deadline=None)
@given(
    y=st.lists(st.floats(0.1, 0.9), min_size=4, max_size=4),
    n=st.integers(1000, 50_000),
    N=st.integers(10**6, 10**8),
)
def test_two_path_relative_taylor_remainder(y, n, N):
    y0n, y0, y1n, y1 = y
    pair = _pair(y0n, y0, y1n, y1, n=n, N=N)
    ddc0 = decompose(pair.prev_survey, pair.prev_bench).ddc
    ddc1 = decompose(pair.curr_survey, pair.curr_bench).ddc
    exact = reldiff_error(pair)
    assert exact == pytest.approx(_exact_relative_error(pair, ddc0, ddc1), abs=1e-9)
    taylor = reldiff_error_decomposed(ddc0, ddc1, pair)
    u0 = (y0n - y0) / y0
    u1 = (y1n - y1) / y1
    # taylor = exact * (1 - u0^2): the remainder is exact * u0^2
    assert taylor - exact == pytest.approx(-exact * u0**2, abs=1e-9)
    assert abs(taylor - exact) <= abs((y1 / y0) * (u1 - u0)) * u0**2 / abs(1 + u0) + 1e-9


def test_reldiff_neff_decomposed_near_exact_for_small_errors():
    pair = _pair(0.401, 0.4, 0.502, 0.5, n=200_000, N=10**8)
    ddc0 = decompose(pair.prev_survey, pair.prev_bench).ddc
    ddc1 = decompose(pair.curr_survey, pair.curr_bench).ddc
    u0 = 0.001 / 0.4
    assert reldiff_neff_decomposed(ddc0, ddc1, pair) == pytest.approx(
        reldiff_neff(pair) / (1 - u0**2) ** 2, rel=1e-9
    )


# subgroup difference

TABLE = dict(p11=3 / 8, p10=1 / 8, p01=2 / 8, p00=2 / 8)


def _table(**kw):
    base = dict(TABLE, group_sizes=(4, 4), sample_sizes=(1, 1), sample_means=(0.0, 1.0))
    base.update(kw)
    return SubgroupTable(**base)


def test_subgroup_sigma_exact():
    t = _table()
    assert subgroup_sigma(t, "exact") ** 2 == pytest.approx(0.4375, abs=1e-15)
    assert subgroup_sigma(t, "exact") == pytest.approx(0.6614, abs=1e-4)


def test_subgroup_sigma_published_formula():
    t = _table()
    assert subgroup_sigma(t, "paper") ** 2 == pytest.approx(1.4375, abs=1e-14)
    assert subgroup_sigma(t, "paper") == pytest.approx(1.199, abs=1e-3)


def test_subgroup_sigma_brute_force_eight_units():
    y = np.array([1, 1, 1, 1, 0, 0, 0, 0.0])
    g = np.array([1, 1, 1, 0, 1, 1, 0, 0])
    ystar = subgroup_star(FinitePopulation(y, subgroup=g))
    assert subgroup_sigma(_table(), "exact") ** 2 == pytest.approx(ystar.var(), abs=1e-15)


def test_subgroup_sigma_symmetric():
    t = _table(p11=0.2, p10=0.2, p01=0.3, p00=0.3)
    assert subgroup_sigma(t) ** 2 == pytest.approx(0.4, abs=1e-15)


def test_subgroup_sigma_published_is_variance_of_y_plus_2g():
    # the published expression equals Var(Y + 2G), hence never negative on a valid table
    y = np.array([1, 1, 1, 1, 0, 0, 0, 0.0])
    g = np.array([1, 1, 1, 0, 1, 1, 0, 0])
    assert subgroup_sigma(_table(), "paper") ** 2 == pytest.approx(np.var(y + 2 * g), abs=1e-15)
    with pytest.raises(ValueError):
        subgroup_sigma(_table(), "bogus")


def test_subgroup_table_invariants():
    with pytest.raises(ValueError, match="sum"):
        _table(p00=0.3)
    with pytest.raises(ValueError):
        _table(p11=-0.1, p00=0.475)
    t = SubgroupTable.from_margins(0.5, 0.625, 3 / 8, (4, 4), (1, 1), (0.0, 1.0))
    assert (t.p10, t.p01, t.p00) == pytest.approx((1 / 8, 2 / 8, 2 / 8))
    assert t.y_mean == 0.5 and t.g_mean == 0.625


@settings(max_examples=100, deadline=None)
@given(N=st.integers(2, 300), seed=st.integers(0, 2**32 - 1))
def test_exact_sigma_matches_unit_brute_force(N, seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, N).astype(float)
    g = rng.integers(0, 2, N)
    cells = [np.mean((y == a) & (g == b)) for a, b in ((1, 1), (1, 0), (0, 1), (0, 0))]
    cells[3] = 1.0 - cells[0] - cells[1] - cells[2]
    t = SubgroupTable(*cells, group_sizes=(1, 1), sample_sizes=(1, 1), sample_means=(0, 0))
    ystar = subgroup_star(FinitePopulation(y, subgroup=g))
    assert subgroup_sigma(t) ** 2 == pytest.approx(ystar.var(), abs=1e-12)


def test_subgroup_equal_gaps():
    t = _table(group_sizes=(1000, 1000), sample_sizes=(10, 10), sample_means=(0.25, 0.5))
    dec = subgroup_decompose(t, 0.25)
    assert dec.ddc == 0.0
    assert dec.n_eff_approx == math.inf


def _joint_oracle(y, g, r):
    """Subgroup inputs whose gaps are means of Y* over the recorded set and the population."""
    N, n = y.size, int(r.sum())
    cells = [np.sum((y == a) & (g == b)) / N for a, b in ((1, 1), (1, 0), (0, 1), (0, 0))]
    rec = r == 1
    sum_i = y[rec & (g == 0)].sum()
    sum_ii = y[rec & (g == 1)].sum()
    n_i = int(np.sum(rec & (g == 0)))
    t = SubgroupTable(
        *cells,
        group_sizes=(int(np.sum(g == 0)), int(np.sum(g == 1))),
        sample_sizes=(n_i, n - n_i),
        sample_means=(sum_i / n, sum_ii / n),
    )
    return t, cells[0] - cells[1]


def test_subgroup_eight_unit_pearson():
    y = np.array([1, 1, 1, 1, 0, 0, 0, 0.0])
    g = np.array([1, 1, 1, 0, 1, 1, 0, 0])
    r = np.array([1, 1, 0, 1, 0, 1, 0, 0])
    t, bench_gap = _joint_oracle(y, g, r)
    dec = subgroup_decompose(t, bench_gap, "exact")
    pop = FinitePopulation(y, subgroup=g, recorded=r)
    ystar = subgroup_star(pop)
    assert dec.ddc == pytest.approx(brute_pearson(ystar, r), abs=1e-10)
    assert dec.ddc == pytest.approx(exact_ddc(pop, ystar), abs=1e-10)
    assert abs(verify_identity(pop, ystar)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(N=st.integers(6, 400), seed=st.integers(0, 2**32 - 1))
def test_subgroup_identity_on_oracle_populations(N, seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, N).astype(float)
    g = rng.integers(0, 2, N)
    r = np.zeros(N, dtype=int)
    r[rng.choice(N, int(rng.integers(2, N)), replace=False)] = 1
    if np.ptp(y * (2 * g - 1)) == 0 or len(set(g[r == 1])) < 2 or len(set(g)) < 2:
        return
    t, bench_gap = _joint_oracle(y, g, r)
    dec = subgroup_decompose(t, bench_gap, "exact")
    pop = FinitePopulation(y, subgroup=g, recorded=r)
    assert dec.ddc == pytest.approx(exact_ddc(pop, subgroup_star(pop)), abs=1e-10)
    assert abs(dec.identity_residual) < 1e-12


def test_subgroup_us_scale_sign():
    # deficiency 33 with n = 1000 per group, N = 1_090_000 per group
    n, N = 2000, 2_180_000
    t = SubgroupTable.from_margins(
        0.4, 0.52, 0.52 * 0.41, (N // 2 - 40_000, N // 2 + 40_000), (n // 2, n // 2), (0.40, 0.40)
    )
    dec = subgroup_decompose(t, 0.03, "exact")
    assert dec.estimation_error == pytest.approx(-0.03)
    assert dec.data_deficiency == pytest.approx(33.0, rel=1e-12)
    sigma = subgroup_sigma(t, "exact")
    assert dec.ddc == pytest.approx(-0.03 / (33 * sigma), rel=1e-12)
    assert dec.ddc < 0
    assert 1e-4 < abs(dec.ddc) < 1e-2


def test_subgroup_errors():
    with pytest.raises(ValueError, match="below population"):
        subgroup_decompose(_table(sample_sizes=(4, 4)), 0.0)
    flat = _table(p11=0.0, p10=0.0, p01=0.5, p00=0.5, group_sizes=(10, 10))
    with pytest.raises(ValueError, match="degenerate"):
        subgroup_decompose(flat, 0.0)
    assert subgroup_decompose(_table(group_sizes=(10, 10)), 0.5, "paper").problem_difficulty == pytest.approx(
        math.sqrt(1.4375)
    )
