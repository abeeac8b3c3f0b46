import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import stats

from dpump.sim import dp_ump_pvalues
from dpump.tulap import PrivacyBudget, TulapParams, nearest_int, tulap_cdf, tulap_sample
from dpump.ump import (
    PrivateRelease,
    TestSpec,
    TestVector,
    binom_pmf_vector,
    decide,
    exact_power,
    is_dp_test,
    oracle_max_power,
    pvalue_left,
    pvalue_right,
    release_statistic,
    solve_threshold,
    ump_test_vector,
)


def classical_ump(n, theta0, alpha):
    """Neyman-Pearson randomized test built from the exact upper tail."""
    pmf = np.array([math.comb(n, x) * theta0**x * (1 - theta0) ** (n - x) for x in range(n + 1)])
    tail = np.append(np.cumsum(pmf[::-1])[::-1], 0.0)  # P(X >= x), x = 0..n+1
    k = int(np.argmax(tail <= alpha))
    phi = np.zeros(n + 1)
    phi[k:] = 1.0
    if k >= 1:
        phi[k - 1] = (alpha - tail[k]) / pmf[k - 1]
    return phi


budgets = st.builds(PrivacyBudget, st.floats(0.05, 6.0),
                    st.one_of(st.just(0.0), st.floats(1e-4, 0.3)))


def recurrence_next(v, eps, delta):
    e = math.exp(eps)
    return min(e * v + delta, 1 - (1 - v) / e + delta / e, 1.0)


class TestBinomPmf:
    def test_small(self):
        assert binom_pmf_vector(2, 0.5) == pytest.approx([0.25, 0.5, 0.25], abs=1e-15)
        assert binom_pmf_vector(1, 0.3) == pytest.approx([0.7, 0.3], abs=1e-15)

    def test_large_sums_to_one(self):
        assert binom_pmf_vector(500, 0.9).sum() == pytest.approx(1.0, abs=1e-12)

    def test_matches_exact_binomial(self):
        n, th = 40, 0.37
        exact = [math.comb(n, x) * th**x * (1 - th) ** (n - x) for x in range(n + 1)]
        assert binom_pmf_vector(n, th) == pytest.approx(exact, rel=1e-12)

    @pytest.mark.parametrize("theta", [0.0, 1.0, -0.1])
    def test_domain(self, theta):
        with pytest.raises(ValueError):
            binom_pmf_vector(3, theta)


class TestSolveThreshold:
    @pytest.mark.parametrize("n", [1, 2, 7, 30, 101])
    @pytest.mark.parametrize("budget", [PrivacyBudget(1.0), PrivacyBudget(0.3, 0.05),
                                        PrivacyBudget(4.0, 0.2)])
    def test_symmetric_case(self, n, budget):
        assert solve_threshold(n, 0.5, 0.5, budget) == pytest.approx(n / 2, abs=1e-9)

    @pytest.mark.parametrize("alpha", [1e-6, 0.01, 0.05, 0.5, 0.97])
    def test_residual(self, alpha):
        budget = PrivacyBudget(0.7, 0.01)
        n, th = 25, 0.3
        m = solve_threshold(n, th, alpha, budget)
        f = tulap_cdf(budget.noise_params(), np.arange(n + 1) - m)
        assert abs(f @ binom_pmf_vector(n, th) - alpha) <= 1e-10

    def test_decreasing_in_alpha(self):
        budget = PrivacyBudget(1.0)
        ms = [solve_threshold(20, 0.4, a, budget) for a in (0.01, 0.05, 0.1, 0.3)]
        assert all(a > b for a, b in zip(ms, ms[1:]))

    def test_domain(self):
        with pytest.raises(ValueError):
            solve_threshold(10, 0.5, 1.0, PrivacyBudget(1.0))


class TestUmpVector:
    def test_nondecreasing_greater(self):
        v = ump_test_vector(TestSpec(30, 0.4, "greater", 0.05, PrivacyBudget(1.0, 0.01)))
        assert np.all(np.diff(v.phi) >= 0)

    def test_nonincreasing_less(self):
        v = ump_test_vector(TestSpec(30, 0.4, "less", 0.05, PrivacyBudget(1.0, 0.01)))
        assert np.all(np.diff(v.phi) <= 0)

    def test_less_mirrors_greater(self):
        # X -> n - X turns the 'less' test at theta0 into 'greater' at 1 - theta0
        budget = PrivacyBudget(0.8, 0.02)
        less = ump_test_vector(TestSpec(17, 0.35, "less", 0.1, budget)).phi
        greater = ump_test_vector(TestSpec(17, 0.65, "greater", 0.1, budget)).phi
        assert less == pytest.approx(greater[::-1], abs=1e-9)

    @pytest.mark.parametrize("alt", ["greater", "less"])
    def test_size_and_dp(self, alt):
        budget = PrivacyBudget(0.5, 0.05)
        spec = TestSpec(40, 0.6, alt, 0.05, budget)
        v = ump_test_vector(spec)
        assert exact_power(v, 40, 0.6) == pytest.approx(0.05, abs=1e-9)
        assert is_dp_test(v.phi, budget)[0]
        assert np.all((v.phi >= 0) & (v.phi <= 1))

    @pytest.mark.parametrize("n, theta0, alpha", [(10, 0.3, 0.05), (25, 0.5, 0.1), (8, 0.9, 0.2)])
    def test_large_epsilon_is_classical(self, n, theta0, alpha):
        phi = ump_test_vector(TestSpec(n, theta0, "greater", alpha, PrivacyBudget(30.0))).phi
        ref = classical_ump(n, theta0, alpha)
        fractional = np.flatnonzero((ref > 0) & (ref < 1))
        others = np.setdiff1d(np.arange(n + 1), fractional)
        assert np.max(np.abs(phi[others] - ref[others])) <= 1e-6
        assert exact_power(phi, n, 0.7) == pytest.approx(exact_power(ref, n, 0.7), abs=1e-6)

    @pytest.mark.parametrize("eps, delta", [(1.0, 0.0), (0.5, 0.05), (2.0, 0.1), (0.2, 0.001)])
    def test_adjacent_recurrence(self, eps, delta):
        v = ump_test_vector(TestSpec(50, 0.3, "greater", 0.05, PrivacyBudget(eps, delta)))
        for x in range(50):
            if v.phi[x] > 0:
                assert v.phi[x + 1] == pytest.approx(recurrence_next(v.phi[x], eps, delta),
                                                     abs=1e-12)

    def test_pure_dp_has_no_zero_entries(self):
        v = ump_test_vector(TestSpec(20, 0.5, "greater", 0.05, PrivacyBudget(2.0)))
        assert np.all(v.phi > 0)


@settings(max_examples=300)
@given(st.floats(-40, 40), st.floats(0.05, 8.0), st.one_of(st.just(0.0), st.floats(1e-5, 0.4)),
       st.integers(-30, 30))
def test_recurrence_identity(m, eps, delta, x):
    budget = PrivacyBudget(eps, delta)
    noise = budget.noise_params()
    cur = tulap_cdf(noise, x - m)
    assume(cur > 0)
    assert tulap_cdf(noise, x + 1 - m) == pytest.approx(recurrence_next(cur, eps, delta), abs=1e-12)


@settings(max_examples=200)
@given(st.floats(-40, 40), st.floats(0.05, 8.0), st.integers(-30, 30))
def test_recurrence_pure_dp(m, eps, x):
    noise = TulapParams(0.0, math.exp(-eps), 0.0)
    cur = tulap_cdf(noise, x - m)
    e = math.exp(eps)
    assert tulap_cdf(noise, x + 1 - m) == pytest.approx(min(e * cur, 1 - (1 - cur) / e), abs=1e-12)


@settings(max_examples=200)
@given(st.floats(0.05, 6.0), st.floats(0.0, 0.4), st.floats(0.0, 1.0))
def test_switch_point(eps, delta, v):
    # below (1 - delta)/(1 + e^eps) the multiplicative bound is the binding one
    e = math.exp(eps)
    cut = (1 - delta) / (1 + e)
    mult = e * v + delta
    comp = 1 - (1 - v) / e + delta / e
    if v < cut - 1e-12:
        assert mult < comp
    elif v > cut + 1e-12:
        assert mult > comp


class TestIsDpTest:
    @given(st.floats(0, 1), budgets, st.integers(1, 20))
    def test_constant_vector(self, c, budget, n):
        assert is_dp_test(np.full(n + 1, c), budget) == (True, [])

    def test_jump_is_not_dp(self):
        ok, violations = is_dp_test([0.0, 1.0], PrivacyBudget(1.0, 0.0))
        assert not ok
        assert (0, "DP2") in violations and (0, "DP3") in violations

    def test_reports_index(self):
        phi = [0.1, 0.2, 0.9, 0.95]
        ok, violations = is_dp_test(phi, PrivacyBudget(1.0))
        assert not ok and {x for x, _ in violations} == {1}

    def test_domain(self):
        with pytest.raises(ValueError):
            is_dp_test([0.1, 1.2], PrivacyBudget(1.0))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 60), st.floats(0.02, 0.98), st.floats(0.001, 0.5), budgets,
           st.sampled_from(["greater", "less"]))
    def test_ump_vectors_are_dp(self, n, theta0, alpha, budget, alt):
        v = ump_test_vector(TestSpec(n, theta0, alt, alpha, budget))
        assert is_dp_test(v.phi, budget)[0]


class TestRelease:
    def test_mean(self, rng):
        budget = PrivacyBudget(1.0)
        z = np.array([release_statistic(5, 10, budget, rng).z for _ in range(20_000)])
        assert z.mean() == pytest.approx(5.0, abs=0.05)

    def test_rounded_noise_is_discrete_laplace(self, rng):
        budget = PrivacyBudget(1.0)
        b = budget.b
        z = np.array([release_statistic(4, 10, budget, rng).z for _ in range(20_000)])
        k = nearest_int(z - 4)
        ks = np.arange(-4, 5)
        obs = np.array([np.count_nonzero(k == v) for v in ks] + [np.count_nonzero(np.abs(k) > 4)])
        pmf = (1 - b) / (1 + b) * b ** np.abs(ks)
        exp = np.append(pmf, 1 - pmf.sum()) * len(z)
        assert stats.chisquare(obs, exp).pvalue > 0.01

    def test_real_valued(self, rng):
        r = release_statistic(3, 10, PrivacyBudget(1.0), rng)
        assert isinstance(r.z, float) and r.z != round(r.z)
        assert r.n == 10

    @pytest.mark.parametrize("x", [-1, 11, 2.5])
    def test_domain(self, rng, x):
        with pytest.raises(ValueError):
            release_statistic(x, 10, PrivacyBudget(1.0), rng)


class TestPValues:
    @pytest.mark.parametrize("n", [1, 10, 31])
    def test_center(self, n):
        r = PrivateRelease(z=n / 2, n=n, budget=PrivacyBudget(0.8, 0.02))
        assert pvalue_right(r, 0.5) == pytest.approx(0.5, abs=1e-12)
        assert pvalue_left(r, 0.5) == pytest.approx(0.5, abs=1e-12)

    def test_far_right(self):
        r = PrivateRelease(z=30 + 200.0, n=30, budget=PrivacyBudget(1.0))
        assert pvalue_right(r, 0.5) <= 1e-10
        assert pvalue_left(r, 0.5) >= 1 - 1e-10

    @given(st.floats(-50, 80), st.floats(0.01, 0.99), budgets)
    def test_complement(self, z, theta0, budget):
        r = PrivateRelease(z=z, n=30, budget=budget)
        assert pvalue_left(r, theta0) + pvalue_right(r, theta0) == 1.0

    def test_equals_inner_product(self):
        budget = PrivacyBudget(1.5, 0.01)
        r = PrivateRelease(z=7.3, n=12, budget=budget)
        f = [tulap_cdf(budget.noise_params(), x - 7.3) for x in range(13)]
        b = [math.comb(12, x) * 0.4**x * 0.6 ** (12 - x) for x in range(13)]
        assert pvalue_right(r, 0.4) == pytest.approx(float(np.dot(f, b)), abs=1e-14)

    def test_uniform_under_null(self, rng):
        budget = PrivacyBudget(1.0)
        x = rng.binomial(30, 0.4, 10_000)
        p = np.array([pvalue_right(release_statistic(int(xi), 30, budget, rng), 0.4) for xi in x])
        assert stats.kstest(p, "uniform").pvalue > 0.01

    def test_conservative_inside_null(self, rng):
        # data from theta < theta0: p-values stochastically larger than uniform
        budget = PrivacyBudget(1.0)
        n = 30
        x = rng.binomial(n, 0.3, 20_000)
        z = x + tulap_sample(budget.noise_params(), rng, size=x.size)
        p = dp_ump_pvalues(z, n, 0.4, budget)
        for u in np.linspace(0.05, 0.95, 19):
            assert np.mean(p <= u) <= u + 3 * math.sqrt(u * (1 - u) / p.size)


class TestDecide:
    spec = TestSpec(30, 0.9, "greater", 0.05, PrivacyBudget(1.0))

    def test_inclusive_boundary(self):
        m = solve_threshold(30, 0.9, 0.05, self.spec.budget)
        r = PrivateRelease(z=m, n=30, budget=self.spec.budget)
        p = pvalue_right(r, 0.9)
        spec = TestSpec(30, 0.9, "greater", p, self.spec.budget)
        out = decide(spec, r)
        assert out.p_value == out.alpha and out.reject

    def test_large_alpha_rejects(self):
        spec = TestSpec(30, 0.5, "greater", 0.999, PrivacyBudget(1.0))
        r = PrivateRelease(z=15.0, n=30, budget=spec.budget)
        assert decide(spec, r).reject

    def test_threshold_reported(self):
        out = decide(self.spec, PrivateRelease(z=20.0, n=30, budget=self.spec.budget))
        assert out.threshold_m == pytest.approx(ump_test_vector(self.spec).threshold_m, abs=1e-12)

    def test_less_uses_left_pvalue(self):
        spec = TestSpec(30, 0.9, "less", 0.05, PrivacyBudget(1.0))
        r = PrivateRelease(z=20.0, n=30, budget=spec.budget)
        assert decide(spec, r).p_value == pvalue_left(r, 0.9)

    def test_rejection_rate_matches_test_vector(self, rng):
        phi = ump_test_vector(self.spec).phi
        budget = self.spec.budget
        # decide() agrees with the vectorised p-value path release by release
        releases = [release_statistic(25, 30, budget, rng) for _ in range(2000)]
        p_fast = dp_ump_pvalues([r.z for r in releases], 30, 0.9, budget)
        assert [decide(self.spec, r).reject for r in releases] == list(p_fast <= 0.05)
        z = 25 + tulap_sample(budget.noise_params(), rng, size=100_000)
        rate = np.mean(dp_ump_pvalues(z, 30, 0.9, budget) <= 0.05)
        assert rate == pytest.approx(phi[25], abs=0.005)

    @pytest.mark.parametrize("release", [
        PrivateRelease(z=3.0, n=29, budget=PrivacyBudget(1.0)),
        PrivateRelease(z=3.0, n=30, budget=PrivacyBudget(2.0)),
    ])
    def test_mismatch(self, release):
        with pytest.raises(ValueError):
            decide(self.spec, release)


class TestExactPower:
    def test_size(self):
        spec = TestSpec(45, 0.25, "greater", 0.07, PrivacyBudget(0.9, 0.01))
        assert exact_power(ump_test_vector(spec), 45, 0.25) == pytest.approx(0.07, abs=1e-9)

    def test_monotone_in_theta(self):
        v = ump_test_vector(TestSpec(20, 0.4, "greater", 0.05, PrivacyBudget(1.0)))
        powers = [exact_power(v, 20, t) for t in np.linspace(0.01, 0.99, 99)]
        assert all(a <= b + 1e-15 for a, b in zip(powers, powers[1:]))

    def test_reject_always(self):
        assert exact_power(np.ones(11), 10, 0.3) == pytest.approx(1.0, abs=1e-14)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            exact_power(TestVector(np.ones(5), 0.0), 10, 0.3)


class TestOracle:
    @pytest.mark.parametrize("delta", [0.0, 0.05])
    def test_matches_closed_form(self, delta):
        budget = PrivacyBudget(1.0, delta)
        best, phi = oracle_max_power(4, 0.4, 0.7, 0.05, budget)
        v = ump_test_vector(TestSpec(4, 0.4, "greater", 0.05, budget))
        assert best == pytest.approx(exact_power(v, 4, 0.7), abs=1e-6)
        assert is_dp_test(np.clip(phi, 0, 1), budget, tol=1e-8)[0]

    def test_no_privacy_matches_classical(self):
        best, _ = oracle_max_power(6, 0.4, 0.7, 0.05, PrivacyBudget(30.0))
        assert best == pytest.approx(exact_power(classical_ump(6, 0.4, 0.05), 6, 0.7), abs=1e-6)

    def test_small_n_only(self):
        with pytest.raises(ValueError):
            oracle_max_power(9, 0.4, 0.7, 0.05, PrivacyBudget(1.0))


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 25), st.floats(0.1, 0.8), st.floats(0.01, 0.3), budgets,
       st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
def test_ump_dominates_feasible_perturbations(n, theta0, alpha, budget, weight, seed):
    """Random DP tests of level alpha never beat the UMP test at any theta1 > theta0."""
    spec = TestSpec(n, theta0, "greater", alpha, budget)
    phi = ump_test_vector(spec).phi
    rng = np.random.default_rng(seed)
    # the constant test alpha is DP; mixtures of DP tests stay DP
    cand = weight * phi + (1 - weight) * alpha
    cand = np.clip(cand + rng.normal(0, 0.01, n + 1), 0, 1)
    assume(is_dp_test(cand, budget)[0])
    assume(exact_power(cand, n, theta0) <= alpha)
    for theta1 in np.linspace(theta0 + 0.01, 0.99, 7):
        assert exact_power(cand, n, theta1) <= exact_power(phi, n, theta1) + 1e-12
