"""Bayesian change-point detection with the product-partition model.

Model (Barry & Hartigan): observations are normal with common variance
``sigma^2``; the series is split into contiguous blocks, and each block of
size ``m`` has mean ``N(mu0, sigma0^2 / m)``.  With ``w = sigma^2 / (sigma^2 +
sigma0^2)``, flat priors on ``mu0`` and ``log sigma^2``, ``w ~ U(0, w0)``
and a change at each position with probability ``p ~ U(0, p0)``, the
marginal posterior of a partition with ``b`` blocks is proportional to

    int_0^p0 p^(b-1) (1-p)^(n-b) dp  *  int_0^w0 w^((b-1)/2) / (W + B w)^((n-1)/2) dw

where ``W`` and ``B`` are the within- and between-block sums of squares.
A Gibbs sampler updates one change indicator at a time from this
expression; :func:`exact_posterior_small` sums it over every partition.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

__all__ = [
    "ChangePointConfig",
    "ChangePointResult",
    "log_partition_prior",
    "log_w_integral",
    "bcp_posterior",
    "exact_posterior_small",
    "detect_intervals",
    "MAX_EXACT_LENGTH",
]

MAX_EXACT_LENGTH = 14
# relative floor on the within-block sum of squares; keeps exactly
# piecewise-constant data from producing an infinite marginal likelihood
_W_FLOOR = 1e-12
# spread below this fraction of the series magnitude is treated as roundoff,
# e.g. first differences of an exactly linear cumulative series
_FLAT_RTOL = 1e-12


@dataclass(frozen=True)
class ChangePointConfig:
    p0: float = 0.2
    w0: float = 0.2
    burn_in: int = 500
    iterations: int = 5000
    seed: int = 20210118
    threshold: float = 0.6
    chains: int = 1

    def __post_init__(self) -> None:
        if not 0 < self.p0 <= 1:
            raise ValueError("p0 must lie in (0, 1]")
        if not 0 < self.w0 <= 1:
            raise ValueError("w0 must lie in (0, 1]")
        if self.burn_in < 0 or self.iterations <= self.burn_in:
            raise ValueError("need iterations > burn_in >= 0")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.chains < 1:
            raise ValueError("chains must be positive")


@dataclass(frozen=True)
class ChangePointResult:
    dates: tuple
    probabilities: np.ndarray
    posterior_means: np.ndarray
    intervals: list[tuple]
    config: ChangePointConfig
    method: str = "gibbs"
    index_intervals: list[tuple[int, int]] = field(default_factory=list)


def log_partition_prior(b: int, n: int, p0: float) -> float:
    """``log int_0^p0 p^(b-1) (1-p)^(n-b) dp`` for a partition with ``b`` blocks."""
    a, c = b, n - b + 1
    log_beta = math.lgamma(a) + math.lgamma(c) - math.lgamma(a + c)
    if p0 >= 1.0:
        return log_beta
    return math.log(special.betainc(a, c, p0)) + log_beta


def _log_inc_beta(alpha: float, beta: float, x: float) -> float:
    """``log int_0^x t^(alpha-1) (1-t)^(beta-1) dt`` for alpha > 0, any beta, 0 < x < 1."""
    if beta > 0:
        reg = special.betainc(alpha, beta, x)
        if reg > 1e-280:
            return math.log(reg) + (
                math.lgamma(alpha) + math.lgamma(beta) - math.lgamma(alpha + beta)
            )
    if x <= 0.5:
        h = special.hyp2f1(alpha, 1.0 - beta, alpha + 1.0, x)
        if math.isfinite(h) and h > 0:
            return alpha * math.log(x) - math.log(alpha) + math.log(h)
    import mpmath

    return float(mpmath.log(mpmath.betainc(alpha, beta, 0, x)))


def log_w_integral(a: float, n: int, W: float, B: float, w0: float) -> float:
    """``log int_0^w0 w^a (W + B w)^(-(n-1)/2) dw``.

    Substituting ``t = B w / (W + B w)`` turns this into an incomplete beta
    integral.  ``W = B = 0`` (a constant series) is handled as the limit in
    which the common factor ``S^(-(n-1)/2)`` is dropped.
    """
    c = (n - 1) / 2.0
    if W <= 0 and B <= 0:
        return (a + 1) * math.log(w0) - math.log(a + 1)
    if B <= 0:
        return (a + 1) * math.log(w0) - math.log(a + 1) - c * math.log(W)
    alpha = a + 1.0
    beta = c - a - 1.0
    x0 = B * w0 / (W + B * w0)
    return -beta * math.log(W) - alpha * math.log(B) + _log_inc_beta(alpha, beta, x0)


class _Series:
    """Prefix sums for O(1) segment sums of squares on a centred series."""

    def __init__(self, values: np.ndarray) -> None:
        x = np.asarray(values, dtype=float)
        self.n = x.size
        self.grand = float(x.mean())
        xc = x - self.grand
        self.values = x
        self.s1 = np.concatenate([[0.0], np.cumsum(xc)]).tolist()
        self.s2 = np.concatenate([[0.0], np.cumsum(xc * xc)]).tolist()
        self.tss = float(np.sum(xc * xc))
        self.degenerate = float(np.ptp(x)) <= _FLAT_RTOL * float(np.max(np.abs(x)))
        self.w_floor = _W_FLOOR * self.tss

    def ss(self, s: int, e: int) -> float:
        d1 = self.s1[e] - self.s1[s]
        v = self.s2[e] - self.s2[s] - d1 * d1 / (e - s)
        return v if v > 0 else 0.0

    def seg_mean(self, s: int, e: int) -> float:
        return self.grand + (self.s1[e] - self.s1[s]) / (e - s)

    def wb(self, W: float, b: int) -> tuple[float, float]:
        if self.degenerate:
            return 0.0, 0.0
        if b == 1:
            return max(self.tss, self.w_floor), 0.0
        B = self.tss - W
        return max(W, self.w_floor), (B if B > 0 else 0.0)


def _validate_series(series: Sequence[tuple[object, float]]) -> tuple[tuple, np.ndarray]:
    dates = tuple(d for d, _ in series)
    values = []
    for d, v in series:
        v = float(v)
        if not math.isfinite(v):
            raise ValueError(f"non-finite value at {d}")
        values.append(v)
    if len(values) < 3:
        raise ValueError("change-point detection needs at least 3 points")
    return dates, np.asarray(values)


def _block_means(data: _Series, starts: list[int], ew: float) -> np.ndarray:
    out = np.empty(data.n)
    bounds = starts + [data.n]
    for s, e in zip(bounds[:-1], bounds[1:]):
        out[s:e] = (1.0 - ew) * data.seg_mean(s, e) + ew * data.grand
    return out


def _posterior_w(data: _Series, W: float, b: int, w0: float) -> float:
    """Posterior mean of ``w`` given a partition."""
    Wf, Bf = data.wb(W, b)
    a = (b - 1) / 2.0
    return math.exp(
        log_w_integral(a + 1, data.n, Wf, Bf, w0) - log_w_integral(a, data.n, Wf, Bf, w0)
    )


def _run_chain(data: _Series, cfg: ChangePointConfig, rng: np.random.Generator):
    n = data.n
    w0 = cfg.w0
    log_prior = [math.nan] + [log_partition_prior(b, n, cfg.p0) for b in range(1, n + 1)]
    u = [0] * n  # u[i] = 1: a block starts at i (i >= 1)
    b = 1
    W = data.tss

    def log_w(W_: float, b_: int) -> float:
        Wf, Bf = data.wb(W_, b_)
        return log_w_integral((b_ - 1) / 2.0, n, Wf, Bf, w0)

    cur = log_w(W, b)
    counts = np.zeros(n)
    mean_sum = np.zeros(n)
    kept = 0
    for it in range(cfg.iterations):
        draws = rng.random(n - 1)
        for i in range(1, n):
            s = i - 1
            while s > 0 and not u[s]:
                s -= 1
            e = i + 1
            while e < n and not u[e]:
                e += 1
            merged = data.ss(s, e)
            split = data.ss(s, i) + data.ss(i, e)
            if u[i]:
                b1, b0 = b, b - 1
                W1 = W
                W0 = W - split + merged
                l1 = cur
                l0 = log_w(W0, b0)
            else:
                b0, b1 = b, b + 1
                W0 = W
                W1 = W - merged + split
                l0 = cur
                l1 = log_w(W1, b1)
            logodds = log_prior[b1] - log_prior[b0] + l1 - l0
            if logodds >= 0:
                p_change = 1.0 / (1.0 + math.exp(-logodds))
            else:
                z = math.exp(logodds)
                p_change = z / (1.0 + z)
            if draws[i - 1] < p_change:
                u[i], b, W, cur = 1, b1, W1, l1
            else:
                u[i], b, W, cur = 0, b0, W0, l0
        # refresh W from scratch to stop drift in the running sum
        starts = [0] + [j for j in range(1, n) if u[j]]
        bounds = starts + [n]
        W = sum(data.ss(s, e) for s, e in zip(bounds[:-1], bounds[1:]))
        cur = log_w(W, b)
        if it >= cfg.burn_in:
            kept += 1
            counts += u
            ew = _posterior_w(data, W, b, w0)
            mean_sum += _block_means(data, starts, ew)
    return counts, mean_sum, kept


def bcp_posterior(
    series: Sequence[tuple[object, float]], config: Optional[ChangePointConfig] = None
) -> ChangePointResult:
    """Posterior change probabilities by Gibbs sampling over change indicators.

    Probabilities are post-burn-in indicator frequencies (position 0 is 0
    by convention); posterior means average the conditional block means
    over the kept iterations.  Chains are seeded from ``config.seed`` and
    their frequencies averaged.
    """
    cfg = config or ChangePointConfig()
    dates, values = _validate_series(series)
    data = _Series(values)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    counts = np.zeros(data.n)
    mean_sum = np.zeros(data.n)
    kept = 0
    for ss in seeds:
        c, m, k = _run_chain(data, cfg, np.random.default_rng(ss))
        counts += c
        mean_sum += m
        kept += k
    probs = counts / kept
    means = mean_sum / kept
    idx = detect_intervals(probs, range(data.n), cfg.threshold)
    return ChangePointResult(
        dates=dates,
        probabilities=probs,
        posterior_means=means,
        intervals=[(dates[s], dates[e]) for s, e in idx],
        config=cfg,
        method="gibbs",
        index_intervals=idx,
    )


def exact_posterior_small(
    series: Sequence[tuple[object, float]], config: Optional[ChangePointConfig] = None
) -> ChangePointResult:
    """Exact posterior by summing over all ``2^(T-1)`` partitions (T <= 14)."""
    cfg = config or ChangePointConfig()
    dates, values = _validate_series(series)
    n = values.size
    if n > MAX_EXACT_LENGTH:
        raise ValueError(f"enumeration infeasible for T={n} > {MAX_EXACT_LENGTH}")
    data = _Series(values)
    log_prior = [math.nan] + [log_partition_prior(b, n, cfg.p0) for b in range(1, n + 1)]
    logs, indicators, means = [], [], []
    for bits in itertools.product((0, 1), repeat=n - 1):
        u = (0,) + bits
        starts = [0] + [j for j in range(1, n) if u[j]]
        bounds = starts + [n]
        b = len(starts)
        W = sum(data.ss(s, e) for s, e in zip(bounds[:-1], bounds[1:]))
        Wf, Bf = data.wb(W, b)
        logs.append(log_prior[b] + log_w_integral((b - 1) / 2.0, n, Wf, Bf, cfg.w0))
        indicators.append(u)
        means.append(_block_means(data, starts, _posterior_w(data, W, b, cfg.w0)))
    logs_arr = np.asarray(logs)
    post = np.exp(logs_arr - special.logsumexp(logs_arr))
    probs = post @ np.asarray(indicators, dtype=float)
    pmeans = post @ np.asarray(means)
    idx = detect_intervals(probs, range(n), cfg.threshold)
    return ChangePointResult(
        dates=dates,
        probabilities=probs,
        posterior_means=pmeans,
        intervals=[(dates[s], dates[e]) for s, e in idx],
        config=cfg,
        method="exact",
        index_intervals=idx,
    )


def detect_intervals(probabilities, dates, threshold: float) -> list[tuple]:
    """Maximal runs of consecutive points whose probability exceeds ``threshold``.

    Returns ``(first, last)`` pairs taken from ``dates`` (inclusive).
    """
    probs = list(probabilities)
    ds = list(dates)
    if len(probs) != len(ds):
        raise ValueError("probabilities and dates must have equal lengths")
    out = []
    start = None
    for i, p in enumerate(probs):
        if p > threshold:
            if start is None:
                start = i
        elif start is not None:
            out.append((ds[start], ds[i - 1]))
            start = None
    if start is not None:
        out.append((ds[start], ds[-1]))
    return out
