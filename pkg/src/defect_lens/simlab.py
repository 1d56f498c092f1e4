"""Finite populations with known moments, recording mechanisms, and brute-force oracles.

Populations are built with exact counts (deterministic rounding, then a
seeded shuffle) so every population moment is known without sampling error.
All randomness goes through ``numpy.random.Generator`` (PCG64) seeded
explicitly by the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Optional, Sequence

import numpy as np

__all__ = [
    "FinitePopulation",
    "SelectionMechanism",
    "generate_population",
    "apply_selection",
    "exact_ddc",
    "verify_identity",
    "mc_mse_srs",
    "subgroup_star",
]


@dataclass(frozen=True)
class FinitePopulation:
    outcomes: np.ndarray
    subgroup: Optional[np.ndarray] = None
    recorded: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        y = np.asarray(self.outcomes, dtype=float)
        if y.ndim != 1 or y.size == 0:
            raise ValueError("outcomes must be a non-empty 1-D sequence")
        object.__setattr__(self, "outcomes", y)
        for name in ("subgroup", "recorded"):
            v = getattr(self, name)
            if v is None:
                continue
            arr = np.asarray(v)
            if arr.shape != y.shape:
                raise ValueError(f"{name} must have length {y.size}")
            if not np.isin(arr, (0, 1)).all():
                raise ValueError(f"{name} must be 0/1")
            object.__setattr__(self, name, arr.astype(np.int8))

    @property
    def size(self) -> int:
        return int(self.outcomes.size)

    @property
    def n_recorded(self) -> int:
        if self.recorded is None:
            raise ValueError("population has no recorded set")
        return int(self.recorded.sum())

    def recorded_mean(self) -> float:
        r = self._recorded_nondegenerate()
        return float(self.outcomes[r == 1].mean())

    def _recorded_nondegenerate(self) -> np.ndarray:
        if self.recorded is None:
            raise ValueError("population has no recorded set")
        n = int(self.recorded.sum())
        if n == 0 or n == self.size:
            raise ValueError("degenerate recording: need 0 < n < N")
        return self.recorded


@dataclass(frozen=True)
class SelectionMechanism:
    """How the recording indicator R is drawn.

    ``srs``: exactly ``n`` units without replacement.
    ``outcome_logistic``: independent ``R_i ~ Bernoulli(logistic(alpha + beta * y_i))``.
    ``fixed_set``: the given (0-based) indices.
    """

    kind: Literal["srs", "outcome_logistic", "fixed_set"]
    n: Optional[int] = None
    alpha: float = 0.0
    beta: float = 0.0
    indices: tuple[int, ...] = field(default_factory=tuple)

    @classmethod
    def srs(cls, n: int) -> "SelectionMechanism":
        return cls("srs", n=n)

    @classmethod
    def outcome_logistic(cls, alpha: float, beta: float) -> "SelectionMechanism":
        return cls("outcome_logistic", alpha=alpha, beta=beta)

    @classmethod
    def fixed_set(cls, indices: Sequence[int]) -> "SelectionMechanism":
        return cls("fixed_set", indices=tuple(int(i) for i in indices))

    @classmethod
    def parse(cls, spec: str) -> "SelectionMechanism":
        """Parse ``srs:N``, ``logistic:ALPHA,BETA`` or ``fixed:I,J,...``."""
        kind, _, rest = spec.partition(":")
        try:
            if kind == "srs":
                return cls.srs(int(rest))
            if kind in ("logistic", "outcome_logistic"):
                a, b = (float(x) for x in rest.split(","))
                return cls.outcome_logistic(a, b)
            if kind in ("fixed", "fixed_set"):
                return cls.fixed_set([int(x) for x in rest.split(",") if x])
        except ValueError as exc:
            raise ValueError(f"bad mechanism spec {spec!r}: {exc}") from None
        raise ValueError(f"unknown mechanism {spec!r}")


def _frechet_check(prevalence: float, g_mean: float, p11: float) -> None:
    lo = max(0.0, prevalence + g_mean - 1.0)
    hi = min(prevalence, g_mean)
    eps = 1e-12
    if p11 < lo - eps:
        raise ValueError(
            f"infeasible joint spec: p11={p11} below Frechet lower bound {lo}"
        )
    if p11 > hi + eps:
        raise ValueError(
            f"infeasible joint spec: p11={p11} above Frechet upper bound {hi}"
        )


def generate_population(
    size: int,
    prevalence: float,
    subgroup_spec: Optional[tuple[float, float]] = None,
    seed: int | np.random.SeedSequence | None = 0,
) -> FinitePopulation:
    """Binary population with exactly ``round(size * prevalence)`` ones.

    ``subgroup_spec=(g_mean, p11)`` also builds a group indicator G with
    joint cell counts rounded from ``p11, p10, p01, p00``.
    """
    if size < 1:
        raise ValueError("size must be positive")
    if not 0.0 <= prevalence <= 1.0:
        raise ValueError("prevalence must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n_y = int(round(size * prevalence))
    if subgroup_spec is None:
        y = np.zeros(size)
        y[:n_y] = 1.0
        rng.shuffle(y)
        return FinitePopulation(y)

    g_mean, p11 = subgroup_spec
    if not 0.0 <= g_mean <= 1.0:
        raise ValueError("subgroup mean must lie in [0, 1]")
    _frechet_check(prevalence, g_mean, p11)
    n_g = int(round(size * g_mean))
    n11 = int(round(size * p11))
    n11 = max(max(0, n_y + n_g - size), min(n11, n_y, n_g))
    n10 = n_y - n11
    n01 = n_g - n11
    n00 = size - n11 - n10 - n01
    y = np.repeat([1.0, 1.0, 0.0, 0.0], [n11, n10, n01, n00])
    g = np.repeat([1, 0, 1, 0], [n11, n10, n01, n00])
    perm = rng.permutation(size)
    return FinitePopulation(y[perm], subgroup=g[perm])


def _logistic(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def apply_selection(
    pop: FinitePopulation,
    mech: SelectionMechanism,
    seed: int | np.random.SeedSequence | None = 0,
) -> FinitePopulation:
    """Return a copy of ``pop`` with the recording indicator drawn from ``mech``."""
    N = pop.size
    r = np.zeros(N, dtype=np.int8)
    if mech.kind == "srs":
        if mech.n is None or not 1 <= mech.n <= N - 1:
            raise ValueError(f"srs sample size must lie in [1, {N - 1}]")
        rng = np.random.default_rng(seed)
        r[rng.choice(N, size=mech.n, replace=False)] = 1
    elif mech.kind == "outcome_logistic":
        rng = np.random.default_rng(seed)
        prob = _logistic(mech.alpha + mech.beta * pop.outcomes)
        r[:] = rng.random(N) < prob
        if r.sum() in (0, N):
            raise ValueError("degenerate recording")
    elif mech.kind == "fixed_set":
        idx = np.unique(np.asarray(mech.indices, dtype=np.int64))
        if idx.size == 0 or idx.size >= N:
            raise ValueError("fixed_set must be a non-empty proper subset")
        if idx.min() < 0 or idx.max() >= N:
            raise ValueError("fixed_set index out of range")
        r[idx] = 1
    else:
        raise ValueError(f"unknown mechanism kind {mech.kind!r}")
    return replace(pop, recorded=r)


def _pearson_n(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float(np.dot(xc, xc)) / x.size)
    sy = math.sqrt(float(np.dot(yc, yc)) / y.size)
    if sx == 0 or sy == 0:
        raise ValueError("correlation undefined: constant outcome or recording")
    return float(np.dot(xc, yc)) / x.size / (sx * sy)


def exact_ddc(pop: FinitePopulation, outcomes: Optional[np.ndarray] = None) -> float:
    """Population Pearson correlation between Y and R (denominator-N moments).

    ``outcomes`` overrides ``pop.outcomes``, e.g. with the signed subgroup
    variable from :func:`subgroup_star`.
    """
    r = pop._recorded_nondegenerate().astype(float)
    y = pop.outcomes if outcomes is None else np.asarray(outcomes, dtype=float)
    return _pearson_n(y, r)


def verify_identity(pop: FinitePopulation, outcomes: Optional[np.ndarray] = None) -> float:
    """Residual of ``(mean_R - mean) - ddc * sqrt((N - n) / n) * sd``; should be ~0."""
    r = pop._recorded_nondegenerate()
    y = pop.outcomes if outcomes is None else np.asarray(outcomes, dtype=float)
    N = y.size
    n = int(r.sum())
    mean = float(y.mean())
    sd = math.sqrt(float(np.mean((y - mean) ** 2)))
    err = float(y[r == 1].mean()) - mean
    return err - exact_ddc(pop, y) * math.sqrt((N - n) / n) * sd


def subgroup_star(pop: FinitePopulation) -> np.ndarray:
    """Signed outcome ``Y*G - Y*(1-G)``: +y in group II (G=1), -y in group I."""
    if pop.subgroup is None:
        raise ValueError("population has no subgroup indicator")
    g = pop.subgroup.astype(float)
    return pop.outcomes * g - pop.outcomes * (1.0 - g)


def mc_mse_srs(
    pop: FinitePopulation,
    n: int,
    replicates: int,
    seed: int | np.random.SeedSequence | None = 0,
    return_se: bool = False,
) -> float | tuple[float, float]:
    """Monte Carlo MSE of the SRS-without-replacement mean of size ``n``.

    With ``return_se=True`` also returns the Monte Carlo standard error.
    """
    N = pop.size
    if not 1 <= n <= N:
        raise ValueError(f"n must lie in [1, {N}]")
    if replicates < 1:
        raise ValueError("replicates must be positive")
    y = pop.outcomes
    mean = float(y.mean())
    if n == N:
        return (0.0, 0.0) if return_se else 0.0
    rng = np.random.default_rng(seed)
    sq = np.empty(replicates)
    for i in range(replicates):
        idx = rng.choice(N, size=n, replace=False)
        sq[i] = (y[idx].mean() - mean) ** 2
    if return_se:
        se = float(sq.std(ddof=1) / math.sqrt(replicates)) if replicates > 1 else math.nan
        return float(sq.mean()), se
    return float(sq.mean())
