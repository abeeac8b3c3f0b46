"""Truncated-Uniform-Laplace (Tulap) distribution.

A Tulap(m, b, 0) variable is ``m + L + U`` with ``L`` discrete Laplace with
pmf proportional to ``b**|x|`` and ``U ~ Uniform(-1/2, 1/2)``.  Tulap(m, b, q)
is the same distribution restricted to its central ``1 - q`` probability mass.

Releasing ``Tulap(T(X), exp(-eps), q)`` for an integer statistic of
sensitivity one, with ``q = 2*delta*b / (1 - b + 2*delta*b)``, is
(eps, delta)-differentially private.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

__all__ = [
    "PrivacyBudget",
    "TulapParams",
    "SamplerError",
    "nearest_int",
    "c_helper",
    "tulap_cdf0",
    "tulap_cdf",
    "tulap_quantile",
    "tulap_sample",
    "q_from_budget",
]

DEFAULT_MAX_TRIES = 10**6


class SamplerError(RuntimeError):
    """Raised when the rejection sampler exceeds its retry cap."""


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) differential privacy budget."""

    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"epsilon must be a positive finite number, got {self.epsilon!r}")
        if not (0.0 <= self.delta < 1.0):
            raise ValueError(f"delta must lie in [0, 1), got {self.delta!r}")

    @property
    def b(self) -> float:
        return math.exp(-self.epsilon)

    @property
    def q(self) -> float:
        return q_from_budget(self)

    def noise_params(self, m: float = 0.0) -> TulapParams:
        """Tulap parameters for releasing a sensitivity-1 count at location ``m``."""
        return TulapParams(m=m, b=self.b, q=self.q)


@dataclass(frozen=True)
class TulapParams:
    """Location ``m``, base ``b`` and truncation mass ``q`` of a Tulap law.

    ``b = 0`` is accepted as the limit of an infinite privacy budget, where
    the distribution degenerates to ``Uniform(m - 1/2, m + 1/2)``.
    """

    m: float
    b: float
    q: float = 0.0
    _log_b: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not math.isfinite(self.m):
            raise ValueError(f"location m must be finite, got {self.m!r}")
        if not (0.0 <= self.b < 1.0):
            raise ValueError(f"b must lie in (0, 1), got {self.b!r}")
        if not (0.0 <= self.q < 1.0):
            raise ValueError(f"q must lie in [0, 1), got {self.q!r}")
        object.__setattr__(self, "_log_b", math.log(self.b) if self.b > 0 else -math.inf)

    def shifted(self, m: float) -> TulapParams:
        return TulapParams(m=m, b=self.b, q=self.q)


def q_from_budget(budget: PrivacyBudget) -> float:
    """Truncation mass ``2*delta*b / (1 - b + 2*delta*b)`` with ``b = exp(-eps)``."""
    b = budget.b
    num = 2.0 * budget.delta * b
    return num / (1.0 - b + num)


def nearest_int(t):
    """Nearest integer, with exact half-integers sent to the nearest even integer.

    Works elementwise on arrays; a scalar input gives a Python ``int``.
    """
    arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("nearest_int requires finite input")
    r = np.rint(arr)  # IEEE round-half-to-even
    if arr.ndim == 0:
        return int(r)
    return r.astype(np.int64)


def _check_b(b):
    if not (0.0 < b < 1.0):
        raise ValueError(f"b must lie in (0, 1), got {b!r}")


def _pow_b(b, k):
    # k >= 0 always, so b**k can only underflow, never overflow.
    if b == 0.0:
        return np.where(k == 0, 1.0, 0.0)
    return np.exp(k * math.log(b))


def c_helper(m, b: float):
    """C(m) = b**[m] * (b + ([m] - m + 1/2)(1 - b)) / (1 + b).

    For integer ``t`` the untruncated CDF of Tulap(m, b, 0) is
    ``b**-t * C(m)`` when ``t <= [m]`` and ``1 - b**t * C(-m)`` otherwise.
    """
    _check_b(b)
    m = np.asarray(m, dtype=float)
    k = np.rint(m)
    out = np.exp(k * math.log(b)) * (b + (k - m + 0.5) * (1.0 - b)) / (1.0 + b)
    return float(out) if out.ndim == 0 else out


def tulap_cdf0(m: float, b: float, x):
    """CDF of the untruncated Tulap(m, b, 0) law at ``x`` (vectorised)."""
    x = np.asarray(x, dtype=float)
    t = x - m
    k = np.rint(t)
    frac = t - k + 0.5  # position inside the unit cell, in [0, 1]
    lower = x <= np.rint(m)
    # lower branch has k <= 0, upper branch k >= 0
    mag = _pow_b(b, np.abs(k))
    lo_val = mag * (b + frac * (1.0 - b)) / (1.0 + b)
    hi_val = 1.0 - mag * (b + (1.0 - frac) * (1.0 - b)) / (1.0 + b)
    out = np.where(lower, lo_val, hi_val)
    return float(out) if out.ndim == 0 else out


def _truncate(f0, q: float):
    if q == 0.0:
        return f0
    half = q / 2.0
    f = np.where(f0 < half, 0.0, np.where(f0 > 1.0 - half, 1.0, (f0 - half) / (1.0 - q)))
    return np.clip(f, 0.0, 1.0)


def tulap_cdf(params: TulapParams, x):
    """CDF of Tulap(m, b, q) at ``x`` (vectorised over ``x``)."""
    f0 = np.asarray(tulap_cdf0(params.m, params.b, x))
    out = _truncate(f0, params.q)
    return float(out) if np.ndim(out) == 0 else out


def tulap_quantile(params: TulapParams, u: float, tol: float = 1e-10) -> float:
    """Inverse CDF by bracketed root finding on the monotone CDF."""
    if not (0.0 < u < 1.0):
        raise ValueError(f"u must lie in (0, 1), got {u!r}")
    m = params.m
    if u == 0.5:
        return float(m)

    def resid(x):
        return tulap_cdf(params, x) - u

    width = 1.0
    lo, hi = m - width, m + width
    while resid(lo) > 0 or resid(hi) < 0:
        width *= 2.0
        lo, hi = m - width, m + width
        if width > 1e12:
            raise ArithmeticError(f"could not bracket quantile u={u!r}")
    x = optimize.brentq(resid, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(resid(x)) > tol:
        # brentq stops on x-width; finish on the residual with plain bisection
        a, c = lo, hi
        for _ in range(400):
            x = 0.5 * (a + c)
            r = resid(x)
            if abs(r) <= tol:
                break
            if r < 0:
                a = x
            else:
                c = x
    return float(x)


def _geometric(rng: np.random.Generator, b: float, size):
    # inverse transform: P(G >= k) = P(U <= b**k) = b**k
    if b == 0.0:
        return np.zeros(size)
    u = 1.0 - rng.random(size)  # in (0, 1]
    return np.floor(np.log(u) / math.log(b))


def tulap_sample(params: TulapParams, rng: np.random.Generator, size=None,
                 max_tries: int = DEFAULT_MAX_TRIES):
    """Draw from Tulap(m, b, q).

    Two geometric variables with success probability ``1 - b`` give a discrete
    Laplace draw; a uniform jitter on (-1/2, 1/2) makes it continuous.  When
    ``q > 0`` draws outside the central ``1 - q`` mass are rejected and
    redrawn.

    Parameters
    ----------
    params : TulapParams
    rng : numpy.random.Generator
        Random stream, consumed deterministically.
    size : int or None
        Number of draws; ``None`` returns a single float.
    max_tries : int
        Cap on rejection rounds before :class:`SamplerError` is raised.
    """
    n = 1 if size is None else int(size)
    m, b, q = params.m, params.b, params.q
    out = np.empty(n)
    filled = 0
    tries = 0
    while filled < n:
        if tries >= max_tries:
            raise SamplerError(
                f"Tulap rejection sampler exceeded {max_tries} rounds (q={q!r})")
        tries += 1
        need = n - filled
        g1 = _geometric(rng, b, need)
        g2 = _geometric(rng, b, need)
        u = rng.random(need) - 0.5
        draw = g1 - g2 + u + m
        if q > 0.0:
            f0 = np.asarray(tulap_cdf0(m, b, draw))
            draw = draw[(f0 >= q / 2.0) & (f0 <= 1.0 - q / 2.0)]
        out[filled:filled + draw.size] = draw
        filled += draw.size
    if size is None:
        return float(out[0])
    return out
