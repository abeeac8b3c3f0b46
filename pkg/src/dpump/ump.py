"""Differentially private UMP tests for a binomial proportion.

The most powerful (eps, delta)-DP test of ``theta <= theta0`` against
``theta > theta0`` rejects with probability ``F_N(x - m)`` where ``F_N`` is the
Tulap(0, b, q) CDF and ``m`` sets the size to ``alpha``.  The same test is a
post-processing of a single Tulap release ``Z ~ Tulap(X, b, q)``, which also
yields exact p-values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Optional

import numpy as np
from scipy import optimize, stats

from .tulap import PrivacyBudget, TulapParams, tulap_cdf, tulap_sample

__all__ = [
    "NumericError",
    "TestSpec",
    "TestVector",
    "PrivateRelease",
    "TestOutcome",
    "binom_pmf_vector",
    "size_at",
    "solve_threshold",
    "ump_test_vector",
    "is_dp_test",
    "release_statistic",
    "pvalue_right",
    "pvalue_left",
    "decide",
    "exact_power",
    "oracle_max_power",
]

Alternative = Literal["greater", "less"]

SLACK = 1e-12


class NumericError(ArithmeticError):
    """A root-finding or optimisation step failed to converge."""


def _check_unit_open(name, value):
    if not (0.0 < value < 1.0):
        raise ValueError(f"{name} must lie in (0, 1), got {value!r}")


@dataclass(frozen=True)
class TestSpec:
    """One-sided binomial test: sample size, null proportion, direction, level, budget."""

    __test__ = False  # not a pytest class

    n: int
    theta0: float
    alternative: Alternative
    alpha: float
    budget: PrivacyBudget

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        _check_unit_open("theta0", self.theta0)
        _check_unit_open("alpha", self.alpha)
        if self.alternative not in ("greater", "less"):
            raise ValueError(f"alternative must be 'greater' or 'less', got {self.alternative!r}")


@dataclass(frozen=True)
class TestVector:
    """Rejection probabilities ``phi[x]`` for ``x = 0..n`` and the threshold used."""

    __test__ = False

    phi: np.ndarray
    threshold_m: float

    @property
    def n(self) -> int:
        return len(self.phi) - 1


@dataclass(frozen=True)
class PrivateRelease:
    """A noisy count ``z ~ Tulap(X, b, q)``; the raw count is never stored."""

    z: float
    n: int
    budget: PrivacyBudget


@dataclass(frozen=True)
class TestOutcome:
    __test__ = False

    p_value: float
    reject: bool
    alpha: float
    threshold_m: Optional[float] = None


def binom_pmf_vector(n: int, theta: float) -> np.ndarray:
    """Binomial(n, theta) probabilities of ``0..n``, evaluated in log space."""
    _check_unit_open("theta", theta)
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n!r}")
    return np.exp(stats.binom.logpmf(np.arange(n + 1), n, theta))


def _noise(budget: PrivacyBudget) -> TulapParams:
    return budget.noise_params(0.0)


def size_at(m: float, n: int, theta0: float, budget: PrivacyBudget) -> float:
    """``E_theta0 F_N(X - m)``: null rejection rate of the 'greater' test at threshold m."""
    noise = _noise(budget)
    return float(tulap_cdf(noise, np.arange(n + 1) - m) @ binom_pmf_vector(n, theta0))


def solve_threshold(n: int, theta0: float, alpha: float, budget: PrivacyBudget,
                    tol: float = 1e-10) -> float:
    """Find ``m`` with ``E_theta0 F_N(X - m) = alpha``.

    The expectation is continuous and strictly decreasing in ``m`` wherever it
    lies in (0, 1), so the root is unique and a bracket search followed by a
    bracketed solver finds it.
    """
    _check_unit_open("theta0", theta0)
    _check_unit_open("alpha", alpha)
    return _solve_threshold(int(n), float(theta0), float(alpha), budget, float(tol))


@lru_cache(maxsize=4096)
def _solve_threshold(n, theta0, alpha, budget, tol):
    noise = _noise(budget)
    xs = np.arange(n + 1)
    pmf = binom_pmf_vector(n, theta0)

    def resid(m):
        return float(tulap_cdf(noise, xs - m) @ pmf) - alpha

    limit = n + 50.0 / (1.0 - noise.b)
    lo, hi = -1.0, n + 1.0
    step = 1.0
    while resid(lo) < 0:
        lo -= step
        step *= 2.0
        if lo < -limit:
            raise NumericError(f"threshold bracket failed below m={lo!r}")
    step = 1.0
    while resid(hi) > 0:
        hi += step
        step *= 2.0
        if hi > limit:
            raise NumericError(f"threshold bracket failed above m={hi!r}")

    m = optimize.brentq(resid, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=200)
    if abs(resid(m)) > tol:
        raise NumericError(f"threshold residual {resid(m):.3e} exceeds {tol:.1e}")
    return float(m)


def ump_test_vector(spec: TestSpec) -> TestVector:
    """The DP-UMP one-sided test of size ``spec.alpha``.

    'greater': ``phi[x] = F_N(x - m1)``; 'less': ``phi[x] = 1 - F_N(x - m2)``.
    """
    noise = _noise(spec.budget)
    xs = np.arange(spec.n + 1)
    if spec.alternative == "greater":
        m = solve_threshold(spec.n, spec.theta0, spec.alpha, spec.budget)
        phi = tulap_cdf(noise, xs - m)
    else:
        m = solve_threshold(spec.n, spec.theta0, 1.0 - spec.alpha, spec.budget)
        phi = 1.0 - tulap_cdf(noise, xs - m)
    return TestVector(phi=np.asarray(phi, dtype=float), threshold_m=m)


def is_dp_test(phi, budget: PrivacyBudget, tol: float = SLACK):
    """Check the four adjacent-count DP inequalities for a test vector.

    Returns
    -------
    ok : bool
    violations : list of (int, str)
        ``(x, name)`` for each violated inequality between ``phi[x]`` and
        ``phi[x+1]``; names are ``"DP1"`` to ``"DP4"``.
    """
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0) or np.any(phi > 1) or not np.all(np.isfinite(phi)):
        raise ValueError("test vector entries must lie in [0, 1]")
    # each inequality u <= e^eps * v + delta is checked as
    # e^-eps * u <= v + e^-eps * delta, so rounding in v is not amplified
    ie, d = math.exp(-budget.epsilon), budget.delta
    a, c = phi[:-1], phi[1:]
    checks = {
        "DP1": ie * a - (c + ie * d),
        "DP2": ie * c - (a + ie * d),
        "DP3": ie * (1 - a) - ((1 - c) + ie * d),
        "DP4": ie * (1 - c) - ((1 - a) + ie * d),
    }
    violations = []
    for x in range(len(a)):
        for name, excess in checks.items():
            if excess[x] > tol:
                violations.append((x, name))
    return not violations, violations


def release_statistic(x: int, n: int, budget: PrivacyBudget,
                      rng: np.random.Generator) -> PrivateRelease:
    """Release ``z ~ Tulap(x, b, q)`` for a count ``0 <= x <= n``.

    This is the only step that sees the raw count.
    """
    if int(x) != x or not (0 <= x <= n):
        raise ValueError(f"count must be an integer in [0, {n}], got {x!r}")
    z = tulap_sample(budget.noise_params(float(x)), rng)
    return PrivateRelease(z=z, n=int(n), budget=budget)


def pvalue_right(release: PrivateRelease, theta0: float) -> float:
    """Exact p-value for ``theta <= theta0`` vs ``theta > theta0``.

    ``sum_x F_N(x - z) * Binom(n, theta0)[x]``; uniform on (0, 1) at theta0.
    """
    _check_unit_open("theta0", theta0)
    noise = _noise(release.budget)
    cdf = tulap_cdf(noise, np.arange(release.n + 1) - release.z)
    p = float(cdf @ binom_pmf_vector(release.n, theta0))
    return min(max(p, 0.0), 1.0)


def pvalue_left(release: PrivateRelease, theta0: float) -> float:
    """Exact p-value for ``theta >= theta0`` vs ``theta < theta0``."""
    return 1.0 - pvalue_right(release, theta0)


def decide(spec: TestSpec, release: PrivateRelease) -> TestOutcome:
    """Reject when the directional p-value is at most ``alpha``."""
    if release.n != spec.n or release.budget != spec.budget:
        raise ValueError("release and test spec disagree on n or privacy budget")
    if spec.alternative == "greater":
        p = pvalue_right(release, spec.theta0)
        m = solve_threshold(spec.n, spec.theta0, spec.alpha, spec.budget)
    else:
        p = pvalue_left(release, spec.theta0)
        m = solve_threshold(spec.n, spec.theta0, 1.0 - spec.alpha, spec.budget)
    return TestOutcome(p_value=p, reject=bool(p <= spec.alpha), alpha=spec.alpha, threshold_m=m)


def exact_power(vector, n: int, theta: float) -> float:
    """``E_theta phi(X)`` for ``X ~ Binom(n, theta)``."""
    phi = vector.phi if isinstance(vector, TestVector) else np.asarray(vector, dtype=float)
    if len(phi) != n + 1:
        raise ValueError(f"test vector has length {len(phi)}, expected {n + 1}")
    return float(phi @ binom_pmf_vector(n, theta))


def oracle_max_power(n: int, theta0: float, theta1: float, alpha: float,
                     budget: PrivacyBudget):
    """Most powerful level-alpha DP test by linear programming (small ``n`` only).

    Maximises ``sum phi[x] B1[x]`` over ``0 <= phi <= 1`` subject to
    ``sum phi[x] B0[x] <= alpha`` and the adjacent-count DP inequalities.
    Knows nothing about the Tulap form and serves as an independent check.

    Returns
    -------
    power : float
    phi : numpy.ndarray
    """
    if n > 8:
        raise ValueError("the LP oracle is meant for n <= 8")
    b0 = binom_pmf_vector(n, theta0)
    b1 = binom_pmf_vector(n, theta1)
    # DP rows divided by e^eps to keep coefficients O(1) for large eps
    ie, d = math.exp(-budget.epsilon), budget.delta
    rows, rhs = [b0], [alpha]
    for x in range(n):
        for sign in (1.0, -1.0):
            # sign=+1: ie*phi[x] - phi[x+1] <= ie*d   (DP1)
            #          ie*phi[x+1] - phi[x] <= ie*d   (DP2)
            # sign=-1: complements, (1 - phi) in place of phi (DP3, DP4)
            for i, j in ((x, x + 1), (x + 1, x)):
                row = np.zeros(n + 1)
                row[i] += sign * ie
                row[j] -= sign * 1.0
                const = 0.0 if sign > 0 else (ie - 1.0)
                rows.append(row)
                rhs.append(ie * d - const)
    res = optimize.linprog(-b1, A_ub=np.array(rows), b_ub=np.array(rhs),
                           bounds=[(0.0, 1.0)] * (n + 1), method="highs",
                           options={"primal_feasibility_tolerance": 1e-10,
                                    "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise NumericError(f"LP oracle failed: {res.message}")
    return float(-res.fun), np.asarray(res.x)
