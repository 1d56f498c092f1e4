import math

import numpy as np
import pytest

# (criterion number, passed, detail) lines filled in by test_acceptance
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def six_unit():
    """Y=(1,1,0,0,1,0) with units 1-3 recorded."""
    from defect_lens.simlab import FinitePopulation

    return FinitePopulation(np.array([1, 1, 0, 0, 1, 0.0]), recorded=np.array([1, 1, 1, 0, 0, 0]))


def brute_pearson(x, y):
    """Denominator-N Pearson correlation, written out term by term."""
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    cov = math.fsum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    sx = math.sqrt(math.fsum((a - mx) ** 2 for a in x) / n)
    sy = math.sqrt(math.fsum((b - my) ** 2 for b in y) / n)
    return cov / (sx * sy)


def linked_series(seed, T=12, N=10_000_000, bias=-0.1, ref_n=1000, target_n=250_000):
    """Synthetic hesitancy/uptake waves sharing ``logit(uptake) = 1 - 4 * hesitancy``.

    Returns (target, reference, benchmark, true hesitancy).  The reference
    survey is small and unbiased; the target survey is large and shifted by
    ``bias`` on the hesitancy scale.
    """
    from datetime import date, timedelta

    from scipy.special import expit

    from defect_lens.assist import PairedSeries
    from defect_lens.decomp import BenchmarkPoint

    rng = np.random.default_rng(seed)
    a_true = np.linspace(0.45, 0.15, T) + rng.normal(0, 0.01, T)
    b_true = expit(1.0 - 4.0 * a_true)
    dates = [date(2021, 1, 4) + timedelta(days=14 * i) for i in range(T)]

    def noisy(x, n):
        return np.clip(x + rng.normal(0, np.sqrt(x * (1 - x) / n)), 1e-4, 1 - 1e-4)

    ref = PairedSeries(dates, noisy(a_true, ref_n), noisy(b_true, ref_n), (ref_n,) * T, "reference")
    tgt = PairedSeries(
        dates,
        noisy(np.clip(a_true + bias, 0.01, 0.99), target_n),
        noisy(b_true, target_n),
        (target_n,) * T,
        "target",
    )
    bench = [BenchmarkPoint(d, N, float(b)) for d, b in zip(dates, b_true)]
    return tgt, ref, bench, a_true
