"""Model-assisted estimation through a beta regression on wave-level averages.

The link model is ``logit(mu_t) = b0 + b1 * a_t`` with ``b_t ~ Beta(mu_t * phi,
(1 - mu_t) * phi)``, where ``a_t`` is the covariate series (e.g. hesitancy)
and ``b_t`` the response series (e.g. uptake), both wave-level proportions.
Fitting is Newton ascent on ``(b0, b1, phi)`` with step halving, falling back
to Fisher scoring when the observed information is not positive definite.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from datetime import date
from typing import Literal, Optional, Sequence

import numpy as np
from scipy.special import expit, gammaln, logit, polygamma, psi

from .decomp import (
    DEFAULT_FACTORS,
    BenchmarkPoint,
    Decomposition,
    SurveySnapshot,
    sensitivity_sweep,
)

__all__ = [
    "PairedSeries",
    "BetaFit",
    "compress_boundary",
    "beta_loglik",
    "beta_score",
    "beta_hessian",
    "fit_beta_regression",
    "invert_mean",
    "model_assisted_estimate",
    "AssistedRow",
    "assisted_series",
]

GRAD_TOL = 1e-6
MAX_ITER = 200


@dataclass(frozen=True)
class PairedSeries:
    """Wave-level covariate/response averages from one survey.

    ``sample_sizes`` is needed only when the series feeds
    :func:`assisted_series`.
    """

    dates: tuple[date, ...]
    covariate: np.ndarray
    response: np.ndarray
    sample_sizes: Optional[tuple[int, ...]] = None
    label: str = ""

    def __post_init__(self) -> None:
        a = np.asarray(self.covariate, dtype=float)
        b = np.asarray(self.response, dtype=float)
        object.__setattr__(self, "covariate", a)
        object.__setattr__(self, "response", b)
        object.__setattr__(self, "dates", tuple(self.dates))
        if not (len(self.dates) == a.size == b.size):
            raise ValueError("dates, covariate and response must have equal lengths")
        if a.size < 3:
            raise ValueError("a paired series needs at least 3 points")
        if any(d1 <= d0 for d0, d1 in zip(self.dates, self.dates[1:])):
            raise ValueError("dates must be strictly increasing")
        if self.sample_sizes is not None:
            object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
            if len(self.sample_sizes) != a.size:
                raise ValueError("sample_sizes must match the series length")

    def __len__(self) -> int:
        return int(self.covariate.size)

    @classmethod
    def from_arrays(cls, covariate, response, start: date = date(2021, 1, 1), **kw) -> "PairedSeries":
        """Series with consecutive daily dates; handy for synthetic data."""
        from datetime import timedelta

        a = np.asarray(covariate, dtype=float)
        dates = tuple(start + timedelta(days=i) for i in range(a.size))
        return cls(dates, a, np.asarray(response, dtype=float), **kw)


@dataclass
class BetaFit:
    beta0: float
    beta1: float
    phi: float
    loglik: float
    converged: bool
    pseudo_r2: float
    iterations: int
    grad_norm: float = math.nan
    std_errors: tuple[float, float, float] = (math.nan, math.nan, math.nan)
    intercept_only: bool = False
    trace: list[float] = field(default_factory=list, repr=False)

    @property
    def params(self) -> np.ndarray:
        return np.array([self.beta0, self.beta1, self.phi])

    def mean(self, covariate) -> np.ndarray | float:
        """Fitted response mean at ``covariate``."""
        return expit(self.beta0 + self.beta1 * np.asarray(covariate, dtype=float))


def compress_boundary(y: np.ndarray) -> np.ndarray:
    """Map responses into the open unit interval with ``(y (T-1) + 0.5) / T``.

    Only applied when some value sits exactly on 0 or 1.
    """
    y = np.asarray(y, dtype=float)
    if np.any((y < 0) | (y > 1)):
        raise ValueError("responses must lie in [0, 1]")
    if np.any((y == 0) | (y == 1)):
        T = y.size
        return (y * (T - 1) + 0.5) / T
    return y


def _check_open(y: np.ndarray) -> None:
    if np.any((y <= 0) | (y >= 1)):
        raise ValueError("beta density undefined: response must lie strictly inside (0, 1)")


def _unpack(params) -> tuple[float, float, float]:
    b0, b1, phi = (float(p) for p in params)
    if not phi > 0:
        raise ValueError("precision phi must be positive")
    return b0, b1, phi


def beta_loglik(params, data: PairedSeries) -> float:
    """Log-likelihood of the mean-precision beta regression."""
    b0, b1, phi = _unpack(params)
    a, y = data.covariate, data.response
    _check_open(y)
    mu = expit(b0 + b1 * a)
    p, q = mu * phi, (1.0 - mu) * phi
    ll = gammaln(phi) - gammaln(p) - gammaln(q) + (p - 1) * np.log(y) + (q - 1) * np.log1p(-y)
    return float(ll.sum())


def beta_score(params, data: PairedSeries) -> np.ndarray:
    """Analytic gradient of :func:`beta_loglik` w.r.t. ``(b0, b1, phi)``."""
    b0, b1, phi = _unpack(params)
    a, y = data.covariate, data.response
    _check_open(y)
    mu = expit(b0 + b1 * a)
    ystar = np.log(y) - np.log1p(-y)
    mustar = psi(mu * phi) - psi((1 - mu) * phi)
    w = mu * (1 - mu)
    d_eta = phi * (ystar - mustar) * w
    d_phi = mu * (ystar - mustar) + np.log1p(-y) - psi((1 - mu) * phi) + psi(phi)
    return np.array([d_eta.sum(), (d_eta * a).sum(), d_phi.sum()])


def beta_hessian(params, data: PairedSeries, expected: bool = False) -> np.ndarray:
    """Second derivatives of the log-likelihood.

    ``expected=True`` drops the terms with zero expectation, giving minus
    the Fisher information.
    """
    b0, b1, phi = _unpack(params)
    a, y = data.covariate, data.response
    mu = expit(b0 + b1 * a)
    p, q = mu * phi, (1 - mu) * phi
    t1p, t1q = polygamma(1, p), polygamma(1, q)
    w = mu * (1 - mu)
    resid = np.log(y) - np.log1p(-y) - (psi(p) - psi(q))
    if expected:
        resid = np.zeros_like(resid)
    h_ee = -(phi**2) * (t1p + t1q) * w**2 + phi * resid * w * (1 - 2 * mu)
    h_ep = resid * w - phi * w * (mu * t1p - (1 - mu) * t1q)
    h_pp = -(mu**2) * t1p - (1 - mu) ** 2 * t1q + polygamma(1, phi)
    H = np.empty((3, 3))
    H[0, 0] = h_ee.sum()
    H[0, 1] = H[1, 0] = (h_ee * a).sum()
    H[1, 1] = (h_ee * a * a).sum()
    H[0, 2] = H[2, 0] = h_ep.sum()
    H[1, 2] = H[2, 1] = (h_ep * a).sum()
    H[2, 2] = h_pp.sum()
    return H


def _initial_params(a: np.ndarray, y: np.ndarray, intercept_only: bool) -> np.ndarray:
    z = logit(y)
    if intercept_only:
        b0, b1 = float(z.mean()), 0.0
    else:
        X = np.column_stack([np.ones_like(a), a])
        (b0, b1), *_ = np.linalg.lstsq(X, z, rcond=None)
    eta = b0 + b1 * a
    mu = expit(eta)
    resid = z - eta
    dof = max(y.size - (1 if intercept_only else 2), 1)
    # delta method: var(y) ~ var(logit y) * (mu(1-mu))^2 = mu(1-mu)/(1+phi)
    rss = float(np.sum(resid**2))
    if rss <= 1e-26 * max(1.0, float(np.sum(z**2))):
        return np.array([b0, b1, math.inf])
    sigma2 = rss / dof * (mu * (1 - mu)) ** 2
    phi = float(np.mean(mu * (1 - mu) / np.maximum(sigma2, 1e-300))) - 1.0
    return np.array([b0, b1, max(phi, 1.0)])


def _pseudo_r2(z: np.ndarray, eta: np.ndarray) -> float:
    zc, ec = z - z.mean(), eta - eta.mean()
    szz, see = float(zc @ zc), float(ec @ ec)
    if szz == 0:
        return 1.0 if np.allclose(z, eta) else 0.0
    if see == 0:
        return 0.0
    return float(min(1.0, (zc @ ec) ** 2 / (szz * see)))


def fit_beta_regression(
    data: PairedSeries, max_iter: int = MAX_ITER, tol: float = GRAD_TOL
) -> BetaFit:
    """Maximum-likelihood beta regression of ``response`` on ``covariate``.

    A constant covariate leaves the slope unidentified, so an intercept-only
    model is fitted with ``beta1 = 0``.  A response whose logit is exactly
    affine in the covariate (a constant response included) has no finite MLE
    for ``phi``; the exact coefficients are returned with ``phi = inf`` and
    ``converged=False``.  Running out of iterations also returns
    ``converged=False`` with the best parameters found.
    """
    a = data.covariate
    y = compress_boundary(data.response)
    if y is not data.response:
        data = PairedSeries(data.dates, a, y, data.sample_sizes, data.label)
    intercept_only = bool(np.ptp(a) == 0)
    z = logit(y)

    if np.ptp(y) == 0:
        intercept_only = True
    free = np.array([0, 2]) if intercept_only else np.arange(3)
    theta = _initial_params(a, y, intercept_only)
    if math.isinf(theta[2]):
        # logit(response) is exactly affine in the covariate: phi -> inf, no finite MLE
        eta = theta[0] + theta[1] * a
        return BetaFit(float(theta[0]), float(theta[1]), math.inf, math.inf, False,
                       _pseudo_r2(z, eta), 0, intercept_only=intercept_only)
    ll = beta_loglik(theta, data)
    trace = [ll]
    converged = False
    it = 0
    g = beta_score(theta, data)[free]
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) < tol:
            converged = True
            it -= 1
            break
        H = beta_hessian(theta, data)[np.ix_(free, free)]
        try:
            np.linalg.cholesky(-H)
        except np.linalg.LinAlgError:
            H = beta_hessian(theta, data, expected=True)[np.ix_(free, free)]
        step = np.linalg.solve(-H, g)
        t = 1.0
        while True:
            cand = theta.copy()
            cand[free] += t * step
            if cand[2] > 0:
                new_ll = beta_loglik(cand, data)
                if new_ll >= ll:
                    break
            t *= 0.5
            if t < 1e-12:
                cand = None
                break
        if cand is None:
            break
        theta, ll = cand, new_ll
        trace.append(ll)
        g = beta_score(theta, data)[free]
    else:
        converged = bool(np.max(np.abs(g)) < tol)

    se = (math.nan,) * 3
    try:
        cov = np.linalg.inv(-beta_hessian(theta, data, expected=True)[np.ix_(free, free)])
        full = np.full(3, math.nan)
        full[free] = np.sqrt(np.diag(cov))
        se = tuple(float(s) for s in full)
    except np.linalg.LinAlgError:
        pass

    eta = theta[0] + theta[1] * a
    return BetaFit(
        beta0=float(theta[0]),
        beta1=float(theta[1]),
        phi=float(theta[2]),
        loglik=float(ll),
        converged=converged,
        pseudo_r2=_pseudo_r2(z, eta),
        iterations=it,
        grad_norm=float(np.max(np.abs(g))),
        std_errors=se,
        intercept_only=intercept_only,
        trace=trace,
    )


def invert_mean(fit: BetaFit, response_mean: float) -> float:
    """Covariate value whose fitted mean equals ``response_mean``."""
    if fit.beta1 == 0:
        raise ValueError("non-invertible flat model")
    if not 0 < response_mean < 1:
        raise ValueError("response_mean must lie in (0, 1)")
    return (float(logit(response_mean)) - fit.beta0) / fit.beta1


def model_assisted_estimate(
    sample_mean: float,
    sample_size: int,
    predicted_nonsample_mean: float,
    population_size: int,
) -> float:
    """Observed mean for sampled units, model prediction for the rest, averaged over N."""
    if sample_size < 0 or sample_size > population_size:
        raise ValueError("sample_size must lie in [0, population_size]")
    n, N = sample_size, population_size
    return (n * sample_mean + (N - n) * predicted_nonsample_mean) / N


@dataclass(frozen=True)
class AssistedRow:
    date: date
    benchmark_date: date
    predicted_mean: float
    reference_assisted: float
    target_original: float
    target_assisted: float
    original: list[Decomposition]
    assisted: list[Decomposition]


def _nearest_preceding(dates: Sequence[date], d: date) -> Optional[int]:
    i = bisect.bisect_right(list(dates), d) - 1
    return i if i >= 0 else None


def assisted_series(
    target: PairedSeries,
    reference: PairedSeries,
    uptake_benchmark: Sequence[BenchmarkPoint],
    factors: Sequence[float] = DEFAULT_FACTORS,
    direction: Literal["response_on_covariate", "covariate_on_response"] = "response_on_covariate",
) -> tuple[BetaFit, list[AssistedRow]]:
    """Model-assisted covariate estimates and their decompositions.

    The link model is fitted on ``reference`` (the probability survey).  For
    each ``target`` date, the benchmark response mean at the nearest
    preceding benchmark date is mapped to a predicted covariate mean for the
    non-sampled units, and both surveys' assisted means are formed.  The
    reference survey's assisted mean then serves as the population mean, and
    the target survey's original and assisted means are decomposed against
    it, once per sensitivity factor.

    ``direction="covariate_on_response"`` instead regresses the covariate on
    the response and predicts directly, with no inversion.
    """
    if target.sample_sizes is None or reference.sample_sizes is None:
        raise ValueError("both series need sample_sizes")
    if not uptake_benchmark:
        raise ValueError("empty benchmark")
    if direction == "response_on_covariate":
        fit = fit_beta_regression(reference)
        predict = lambda x: invert_mean(fit, x)  # noqa: E731
    elif direction == "covariate_on_response":
        swapped = PairedSeries(reference.dates, reference.response, reference.covariate,
                               reference.sample_sizes, reference.label)
        fit = fit_beta_regression(swapped)
        predict = lambda x: float(fit.mean(x))  # noqa: E731
    else:
        raise ValueError(f"unknown direction {direction!r}")

    bench_dates = [b.date for b in uptake_benchmark]
    rows: list[AssistedRow] = []
    for i, d in enumerate(target.dates):
        bi = _nearest_preceding(bench_dates, d)
        ri = _nearest_preceding(reference.dates, d)
        if bi is None or ri is None:
            continue
        bench = uptake_benchmark[bi]
        N = bench.population_size
        pred = predict(bench.population_mean)
        ref_assisted = model_assisted_estimate(
            float(reference.covariate[ri]), reference.sample_sizes[ri], pred, N
        )
        n_t = target.sample_sizes[i]
        orig = float(target.covariate[i])
        tgt_assisted = model_assisted_estimate(orig, n_t, pred, N)
        ref_bench = BenchmarkPoint(d, N, ref_assisted)
        decs = [
            sensitivity_sweep(SurveySnapshot(d, n_t, value, label=target.label), ref_bench, factors)
            for value in (orig, tgt_assisted)
        ]
        rows.append(
            AssistedRow(d, bench.date, pred, ref_assisted, orig, tgt_assisted, decs[0], decs[1])
        )
    if not rows:
        raise ValueError("empty date intersection between target, reference and benchmark")
    return fit, rows
