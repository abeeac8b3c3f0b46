"""Uniformly most powerful binomial tests under (epsilon, delta)-differential privacy."""
from .tulap import (PrivacyBudget, TulapParams, c_helper, nearest_int, q_from_budget,
                    tulap_cdf, tulap_quantile, tulap_sample)
from .ump import (PrivateRelease, TestOutcome, TestSpec, TestVector, binom_pmf_vector, decide,
                  exact_power, is_dp_test, oracle_max_power, pvalue_left, pvalue_right,
                  release_statistic, solve_threshold, ump_test_vector)
from .nonparam import (PairedSample, TwoSample, median_statistic, private_median_test,
                       private_sign_test, sign_statistic)

__version__ = "0.1.0"
