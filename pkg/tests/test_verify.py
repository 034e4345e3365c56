"""The verification suite itself: sensitivity and composition."""

import math

import numpy as np

from jetflow.verify import (
    FAST_LEVEL,
    FULL_LEVEL,
    check_identity_init,
    check_sampling,
    check_schedule,
    logdet_discrepancy_without_cap_term,
)


class TestSuiteSensitivity:
    def test_dropping_the_cap_term_is_caught(self):
        """An implementation that forgot the cap's log contribution would sit
        exactly (transformed dims) * ln(cap) away from the Jacobian per layer."""
        gap = logdet_discrepancy_without_cap_term(num_draws=5)
        expected = 4.0 * math.log(2.0)  # half of D=8 dims, cap of 2
        np.testing.assert_allclose(gap, expected, atol=1e-3)


class TestSuiteComposition:
    def test_individual_checks_report_timing_and_detail(self):
        result = check_schedule()
        assert result.passed
        assert result.seconds >= 0.0
        assert result.detail
        assert "PASS" in result.line()

    def test_identity_and_sampling_checks_pass(self):
        assert check_identity_init().passed
        assert check_sampling().passed

    def test_levels_are_named(self):
        assert FAST_LEVEL == "fast"
        assert FULL_LEVEL == "full"
