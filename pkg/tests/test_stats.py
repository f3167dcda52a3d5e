"""Paired t-test: statistic, two-sided p-value, degenerate handling.

The length-5 fixture expectations were computed with an independent
pure-Python oracle (Student-t CDF via an incomplete-beta continued fraction)
and frozen before the implementation under test existed.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from kisrf.stats import TTestResult, paired_t_test

# frozen oracle values for a = (0.8, 0.6, 0.7, 0.9, 0.5), b = (0.6, 0.5,
# 0.65, 0.7, 0.45): mean diff 0.12, sd of diffs 0.07583..., dof 4
FIXTURE_A = [0.8, 0.6, 0.7, 0.9, 0.5]
FIXTURE_B = [0.6, 0.5, 0.65, 0.7, 0.45]
FIXTURE_T = 3.538606947717529
FIXTURE_P = 0.024043528799373826


class TestPairedTTest:
    def test_frozen_fixture(self):
        result = paired_t_test(FIXTURE_A, FIXTURE_B)
        assert not result.degenerate
        assert result.dof == 4
        assert result.t == pytest.approx(FIXTURE_T, abs=1e-6)
        assert result.p == pytest.approx(FIXTURE_P, abs=1e-6)

    def test_order_flip_negates_t_same_p(self):
        fwd = paired_t_test(FIXTURE_A, FIXTURE_B)
        rev = paired_t_test(FIXTURE_B, FIXTURE_A)
        assert rev.t == pytest.approx(-fwd.t, abs=1e-12)
        assert rev.p == pytest.approx(fwd.p, abs=1e-12)

    def test_identical_samples_degenerate(self):
        result = paired_t_test([0.5, 0.6, 0.7], [0.5, 0.6, 0.7])
        assert result.degenerate
        assert result.t == 0.0

    def test_constant_nonzero_difference_degenerate(self):
        result = paired_t_test([2.0, 3.0, 4.0, 5.0], [1.0, 2.0, 3.0, 4.0])
        assert result.degenerate

    def test_shifting_both_sides_is_invariant(self):
        a = np.array(FIXTURE_A)
        b = np.array(FIXTURE_B)
        base = paired_t_test(a, b)
        shifted = paired_t_test(a + 5.0, b + 5.0)
        assert shifted.t == pytest.approx(base.t, abs=1e-9)
        assert shifted.p == pytest.approx(base.p, abs=1e-9)

    def test_p_symmetric_two_sided_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = rng.normal(size=6)
            b = a + rng.normal(scale=0.5, size=6) + 0.1
            result = paired_t_test(a, b)
            if result.degenerate:
                continue
            assert 0.0 <= result.p <= 1.0

    def test_large_t_small_p(self):
        a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
        b = [x - 1.0 + 0.001 * i for i, x in enumerate(a)]
        result = paired_t_test(a, b)
        assert result.p < 1e-4
        assert result.t > 0

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError):
            paired_t_test([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            paired_t_test([1.0], [2.0])

    def test_dof_is_n_minus_one(self):
        result = paired_t_test(list(range(8)), [x + ((-1) ** x) * 0.5 for x in range(8)])
        assert result.dof == 7

    def test_against_textbook_two_point(self):
        # diffs (1, -1): mean 0, t = 0, p = 1
        result = paired_t_test([1.0, 0.0], [0.0, 1.0])
        assert not result.degenerate
        assert result.t == pytest.approx(0.0, abs=1e-15)
        assert result.p == pytest.approx(1.0, abs=1e-12)

    def test_monotone_p_in_effect_size(self):
        base = np.array([0.5, 0.55, 0.6, 0.65, 0.7])
        noise = np.array([0.01, -0.02, 0.015, -0.01, 0.02])
        previous = 1.1
        for effect in (0.02, 0.05, 0.1, 0.2):
            result = paired_t_test(base + effect + noise, base)
            assert result.p < previous
            previous = result.p

    def test_result_is_plain_dataclass(self):
        result = paired_t_test(FIXTURE_A, FIXTURE_B)
        assert isinstance(result, TTestResult)
        assert set(result.__dataclass_fields__) == {"t", "p", "dof", "degenerate"}
