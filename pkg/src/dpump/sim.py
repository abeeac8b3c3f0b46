"""Monte Carlo power and type I error of private and non-private binomial tests.

Three methods are compared on ``H0: theta <= theta0`` vs ``H1: theta > theta0``:

``dp_ump``
    Tulap release of the count followed by the exact private p-value.
``normal_approx``
    Laplace(1/eps) noise on the count and a normal approximation p-value.
``nonprivate_ump``
    Classical randomized binomial test with exact size.

A replicate rejects when its p-value is strictly below ``alpha``.

Random streams are derived from ``(seed, method, grid index, block index)``
with :class:`numpy.random.SeedSequence`, so results do not depend on how
blocks are scheduled across workers.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Literal, Sequence, Tuple

import numpy as np
from scipy import stats

from .tulap import PrivacyBudget, tulap_cdf, tulap_sample
from .ump import binom_pmf_vector

__all__ = [
    "METHODS",
    "CSV_HEADER",
    "ConfigError",
    "PowerConfig",
    "Type1Config",
    "SimRow",
    "laplace_sample",
    "normal_approx_pvalue",
    "nonprivate_ump_pvalue",
    "nonprivate_ump_test_vector",
    "dp_ump_pvalues",
    "run_power_experiment",
    "run_type1_experiment",
    "write_csv",
    "rows_to_csv",
]

METHODS = ("dp_ump", "normal_approx", "nonprivate_ump")
_METHOD_KEY = {name: i for i, name in enumerate(METHODS)}

CSV_HEADER = ("method", "n", "theta0", "theta_true", "epsilon", "delta", "alpha",
              "replicates", "seed", "rejection_rate")

BLOCK_SIZE = 5000

VarianceMode = Literal["paper_quarter", "plug_in"]


class ConfigError(ValueError):
    pass


def _check_common(alpha, replicates, seed, methods, variance_mode):
    if not (0.0 < alpha < 1.0):
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha!r}")
    if int(replicates) != replicates or replicates < 1:
        raise ConfigError(f"replicates must be a positive integer, got {replicates!r}")
    if int(seed) != seed or not (0 <= seed < 2**64):
        raise ConfigError(f"seed must be a 64-bit non-negative integer, got {seed!r}")
    if not methods or any(m not in METHODS for m in methods):
        raise ConfigError(f"methods must be a nonempty subset of {METHODS}, got {methods!r}")
    if variance_mode not in ("paper_quarter", "plug_in"):
        raise ConfigError(f"unknown variance mode {variance_mode!r}")


def _check_unit(name, value):
    if not (0.0 < value < 1.0):
        raise ConfigError(f"{name} must lie in (0, 1), got {value!r}")


@dataclass(frozen=True)
class PowerConfig:
    n_grid: Tuple[int, ...]
    theta_true: float
    theta0: float
    alpha: float
    budget: PrivacyBudget
    replicates: int = 10_000
    seed: int = 0
    methods: Tuple[str, ...] = METHODS
    variance_mode: VarianceMode = "paper_quarter"

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(self.n_grid))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.n_grid or any(int(n) != n or n < 1 for n in self.n_grid):
            raise ConfigError(f"n_grid must be a nonempty list of positive integers, got {self.n_grid!r}")
        _check_unit("theta_true", self.theta_true)
        _check_unit("theta0", self.theta0)
        _check_common(self.alpha, self.replicates, self.seed, self.methods, self.variance_mode)


@dataclass(frozen=True)
class Type1Config:
    n: int
    theta0_grid: Tuple[float, ...]
    alpha: float
    budget: PrivacyBudget
    replicates: int = 20_000
    seed: int = 0
    methods: Tuple[str, ...] = ("dp_ump", "normal_approx")
    variance_mode: VarianceMode = "paper_quarter"

    def __post_init__(self):
        object.__setattr__(self, "theta0_grid", tuple(self.theta0_grid))
        object.__setattr__(self, "methods", tuple(self.methods))
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n!r}")
        if not self.theta0_grid:
            raise ConfigError("theta0_grid must be nonempty")
        for t in self.theta0_grid:
            _check_unit("theta0", t)
        _check_common(self.alpha, self.replicates, self.seed, self.methods, self.variance_mode)


@dataclass(frozen=True)
class SimRow:
    method: str
    n: int
    theta0: float
    theta_true: float
    epsilon: float
    delta: float
    alpha: float
    replicates: int
    seed: int
    rejections: int = field(repr=False)

    @property
    def rejection_rate(self) -> float:
        return self.rejections / self.replicates

    def as_record(self):
        return (self.method, self.n, self.theta0, self.theta_true, self.epsilon, self.delta,
                self.alpha, self.replicates, self.seed, self.rejection_rate)


def laplace_sample(scale: float, rng: np.random.Generator, size=None):
    """Laplace draw(s) with mean 0 and the given scale."""
    if not (scale > 0 and math.isfinite(scale)):
        raise ValueError(f"scale must be positive, got {scale!r}")
    return rng.laplace(0.0, scale, size)


def normal_approx_pvalue(s, n: int, theta0: float, epsilon: float,
                         variance_mode: VarianceMode = "paper_quarter"):
    """One-sided normal approximation p-value for a Laplace-noised count ``s``.

    ``1 - Phi((s - n*theta0) / sigma)`` with ``sigma**2 = n/4 + 2/eps**2``
    (``"paper_quarter"``) or ``n*theta0*(1 - theta0) + 2/eps**2``
    (``"plug_in"``).
    """
    if not (0.0 < theta0 < 1.0):
        raise ValueError(f"theta0 must lie in (0, 1), got {theta0!r}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon!r}")
    if variance_mode == "paper_quarter":
        var = n / 4.0 + 2.0 / epsilon**2
    elif variance_mode == "plug_in":
        var = n * theta0 * (1.0 - theta0) + 2.0 / epsilon**2
    else:
        raise ValueError(f"unknown variance mode {variance_mode!r}")
    p = stats.norm.sf((np.asarray(s, dtype=float) - n * theta0) / math.sqrt(var))
    return float(p) if np.ndim(p) == 0 else p


def nonprivate_ump_pvalue(x, n: int, theta0: float, u=1.0):
    """Randomized exact binomial p-value ``P(X > x) + u * P(X = x)``.

    With the default ``u = 1`` this is the ordinary tail ``P(X >= x)``.
    Drawing ``u ~ Uniform(0, 1)`` gives a p-value that is exactly uniform
    under ``theta0``; rejecting when it is below ``alpha`` is the classical
    randomized UMP test.
    """
    x = np.asarray(x)
    if np.any(x < 0) or np.any(x > n):
        raise ValueError(f"counts must lie in [0, {n}]")
    p = stats.binom.sf(x, n, theta0) + np.asarray(u) * stats.binom.pmf(x, n, theta0)
    p = np.clip(p, 0.0, 1.0)
    return float(p) if np.ndim(p) == 0 else p


def nonprivate_ump_test_vector(n: int, theta0: float, alpha: float) -> np.ndarray:
    """Classical randomized UMP test: 0 below a cutoff, 1 above, randomized at it."""
    pmf = binom_pmf_vector(n, theta0)
    phi = np.zeros(n + 1)
    mass = 0.0
    for x in range(n, -1, -1):
        if mass + pmf[x] <= alpha:
            phi[x] = 1.0
            mass += pmf[x]
        else:
            phi[x] = (alpha - mass) / pmf[x]
            break
    return phi


def dp_ump_pvalues(z, n: int, theta0: float, budget: PrivacyBudget) -> np.ndarray:
    """Vectorised exact private p-values for an array of Tulap releases."""
    z = np.asarray(z, dtype=float)
    cdf = tulap_cdf(budget.noise_params(0.0), np.arange(n + 1)[None, :] - z[:, None])
    return np.clip(cdf @ binom_pmf_vector(n, theta0), 0.0, 1.0)


def _block_rng(seed, method, grid_index, block_index):
    ss = np.random.SeedSequence(seed, spawn_key=(_METHOD_KEY[method], grid_index, block_index))
    return np.random.Generator(np.random.PCG64(ss))


def _rejections(method, n, theta0, theta_true, alpha, budget, variance_mode, size, rng):
    x = rng.binomial(n, theta_true, size)
    if method == "dp_ump":
        z = x + tulap_sample(budget.noise_params(0.0), rng, size)
        p = dp_ump_pvalues(z, n, theta0, budget)
    elif method == "normal_approx":
        s = x + laplace_sample(1.0 / budget.epsilon, rng, size)
        p = normal_approx_pvalue(s, n, theta0, budget.epsilon, variance_mode)
    else:
        p = nonprivate_ump_pvalue(x, n, theta0, rng.random(size))
    return int(np.count_nonzero(np.asarray(p) < alpha))


def _run(points, alpha, budget, replicates, seed, methods, variance_mode, workers):
    # points: list of (n, theta0, theta_true); one task per (method, point, block)
    blocks = [(b * BLOCK_SIZE, min(BLOCK_SIZE, replicates - b * BLOCK_SIZE))
              for b in range(-(-replicates // BLOCK_SIZE))]
    tasks = [(method, gi, bi, size)
             for method in methods
             for gi in range(len(points))
             for bi, (_, size) in enumerate(blocks)]

    def work(task):
        method, gi, bi, size = task
        n, theta0, theta_true = points[gi]
        rng = _block_rng(seed, method, gi, bi)
        return _rejections(method, n, theta0, theta_true, alpha, budget, variance_mode, size, rng)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            counts = list(pool.map(work, tasks))
    else:
        counts = [work(t) for t in tasks]

    totals = {}
    for (method, gi, _, _), c in zip(tasks, counts):
        totals[(method, gi)] = totals.get((method, gi), 0) + c
    rows = []
    for method in methods:
        for gi, (n, theta0, theta_true) in enumerate(points):
            rows.append(SimRow(method=method, n=int(n), theta0=float(theta0),
                               theta_true=float(theta_true), epsilon=budget.epsilon,
                               delta=budget.delta, alpha=alpha, replicates=int(replicates),
                               seed=int(seed), rejections=totals[(method, gi)]))
    return rows


def run_power_experiment(cfg: PowerConfig, workers: int = 1) -> List[SimRow]:
    """Empirical power of each method at ``theta_true`` for every ``n`` in the grid."""
    points = [(n, cfg.theta0, cfg.theta_true) for n in cfg.n_grid]
    return _run(points, cfg.alpha, cfg.budget, cfg.replicates, cfg.seed, cfg.methods,
                cfg.variance_mode, workers)


def run_type1_experiment(cfg: Type1Config, workers: int = 1) -> List[SimRow]:
    """Empirical size of each method with data drawn at ``theta0`` for every grid point."""
    points = [(cfg.n, t, t) for t in cfg.theta0_grid]
    return _run(points, cfg.alpha, cfg.budget, cfg.replicates, cfg.seed, cfg.methods,
                cfg.variance_mode, workers)


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def write_csv(rows: Sequence[SimRow], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([_fmt(v) for v in row.as_record()])


def rows_to_csv(rows: Sequence[SimRow]) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()
