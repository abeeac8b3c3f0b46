"""Private sign and median tests via reduction to a binomial count.

Both statistics have sensitivity one and are Binomial(n, 1/2) under the
null, so they are released with Tulap noise and tested with the exact
binomial p-value.

Privacy caveat: with ``tie_policy="drop"`` the effective sample size of the
sign test depends on the data and is reported alongside the release.  Use
``tie_policy="error"`` when that is not acceptable.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence, Tuple

import numpy as np

from .tulap import PrivacyBudget
from .ump import PrivateRelease, TestOutcome, TestSpec, decide, release_statistic

__all__ = [
    "DataError",
    "PairedSample",
    "TwoSample",
    "sign_statistic",
    "median_statistic",
    "private_sign_test",
    "private_median_test",
    "private_count_test",
]


class DataError(ValueError):
    """Input data violate a precondition (ties, duplicates, ragged or empty input)."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class PairedSample:
    pairs: Tuple[Tuple[float, float], ...]

    def __init__(self, pairs: Sequence[Tuple[float, float]]):
        arr = np.asarray(pairs, dtype=float).reshape(-1, 2) if len(pairs) else np.empty((0, 2))
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr).all(axis=1))[0])
            raise DataError(f"non-finite value in pair {bad}", index=bad)
        object.__setattr__(self, "pairs", tuple(map(tuple, arr.tolist())))

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True)
class TwoSample:
    xs: Tuple[float, ...]
    ys: Tuple[float, ...]

    def __init__(self, xs: Sequence[float], ys: Sequence[float]):
        xs = np.asarray(xs, dtype=float).ravel()
        ys = np.asarray(ys, dtype=float).ravel()
        if len(xs) != len(ys):
            raise DataError(f"samples must have equal sizes, got {len(xs)} and {len(ys)}")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise DataError("non-finite value in sample")
        object.__setattr__(self, "xs", tuple(xs.tolist()))
        object.__setattr__(self, "ys", tuple(ys.tolist()))

    def __len__(self):
        return len(self.xs)


def sign_statistic(sample: PairedSample, tie_policy: Literal["drop", "error"] = "drop"):
    """Count pairs with ``x > y``.

    Returns
    -------
    t : int
        Number of non-tied pairs with ``x > y``.
    n_eff : int
        Number of non-tied pairs.
    """
    if tie_policy not in ("drop", "error"):
        raise ValueError(f"unknown tie policy {tie_policy!r}")
    if len(sample) == 0:
        raise DataError("empty sample")
    arr = np.asarray(sample.pairs, dtype=float)
    ties = np.flatnonzero(arr[:, 0] == arr[:, 1])
    if ties.size and tie_policy == "error":
        i = int(ties[0])
        raise DataError(f"tied pair at index {i}: x == y == {arr[i, 0]!r}", index=i)
    keep = arr[:, 0] != arr[:, 1]
    t = int(np.count_nonzero(arr[keep, 0] > arr[keep, 1]))
    return t, int(np.count_nonzero(keep))


def _jitter_duplicates(values: np.ndarray) -> np.ndarray:
    """Separate repeated values by whole ulps, in order of appearance."""
    out = values.copy()
    order = np.argsort(values, kind="stable")
    for pos in range(1, len(order)):
        prev, cur = order[pos - 1], order[pos]
        if out[cur] <= out[prev]:
            out[cur] = np.nextafter(out[prev], np.inf)
    return out


def median_statistic(sample: TwoSample, duplicates: Literal["error", "jitter"] = "error") -> int:
    """Number of ``x`` whose rank in the pooled sample exceeds ``n``.

    ``rank(x_i) = #{x_j <= x_i} + #{y_j <= x_i}``.  Pooled values must be
    distinct; ``duplicates="jitter"`` instead nudges repeats apart by a few
    ulps in order of appearance (xs first).  Jittering is a convenience,
    not part of the test's guarantees.
    """
    n = len(sample)
    if n == 0:
        raise DataError("empty sample")
    xs = np.asarray(sample.xs, dtype=float)
    ys = np.asarray(sample.ys, dtype=float)
    pooled = np.concatenate([xs, ys])
    if duplicates == "jitter":
        pooled = _jitter_duplicates(pooled)
        xs, ys = pooled[:n], pooled[n:]
    elif duplicates == "error":
        vals, first, counts = np.unique(pooled, return_index=True, return_counts=True)
        if np.any(counts > 1):
            v = vals[counts > 1][0]
            idx = np.flatnonzero(pooled == v)
            raise DataError(f"duplicate value {v!r} at pooled positions {idx.tolist()}",
                            index=int(idx[1]))
    else:
        raise ValueError(f"unknown duplicates policy {duplicates!r}")
    sx = np.sort(xs)
    sy = np.sort(ys)
    ranks = np.searchsorted(sx, xs, side="right") + np.searchsorted(sy, xs, side="right")
    return int(np.count_nonzero(ranks > n))


def private_count_test(t: int, n: int, theta0: float, alternative: str, alpha: float,
                       budget: PrivacyBudget, rng: np.random.Generator):
    """Release ``t`` with Tulap noise and test ``theta0``; the binomial pipeline."""
    spec = TestSpec(n=n, theta0=theta0, alternative=alternative, alpha=alpha, budget=budget)
    release = release_statistic(t, n, budget, rng)
    return decide(spec, release), release


def private_sign_test(sample: PairedSample, alternative: str = "greater", alpha: float = 0.05,
                      budget: PrivacyBudget = None, rng: np.random.Generator = None,
                      theta0: float = 0.5, tie_policy: str = "drop"):
    """DP sign test of ``P(X > Y) = theta0``.

    Returns ``(outcome, release)``; the raw count is not exposed.  The
    release's ``n`` is the effective sample size after tie handling.
    """
    if budget is None or rng is None:
        raise TypeError("budget and rng are required")
    t, n_eff = sign_statistic(sample, tie_policy)
    if n_eff == 0:
        raise DataError("no untied pairs left after dropping ties")
    return private_count_test(t, n_eff, theta0, alternative, alpha, budget, rng)


def private_median_test(sample: TwoSample, alternative: str = "greater", alpha: float = 0.05,
                        budget: PrivacyBudget = None, rng: np.random.Generator = None,
                        duplicates: str = "error"):
    """DP median test of ``median(X) <= median(Y)`` (for ``alternative="greater"``)."""
    if budget is None or rng is None:
        raise TypeError("budget and rng are required")
    t = median_statistic(sample, duplicates)
    return private_count_test(t, len(sample), 0.5, alternative, alpha, budget, rng)
