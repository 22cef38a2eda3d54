"""Unit tests for the fast checks of the selftest battery and its error handling."""

import unittest
from unittest import mock

from svie_lift import selftest
from svie_lift.exceptions import DivergenceError


class TestFastChecks(unittest.TestCase):
    """Test the checks that run in seconds."""

    def test_fast_checks_pass(self):
        """Test the curve-space, certificate and calibration checks."""
        checks = [
            selftest.check_semigroup_bound,
            selftest.check_contraction,
            selftest.check_certificates,
            selftest.check_energy_distance,
            selftest.check_null_calibration,
        ]
        for check in checks:
            with self.subTest(check=check.__name__):
                result = check()
                self.assertTrue(result.passed, result.detail)

    def test_adjoint_check_reports_all_three_errors(self):
        """Test the adjoint check at 1e-8 for the identity and 1e-9 for the norm and the psi witness."""
        result = selftest.check_adjoint()
        self.assertTrue(result.passed, result.detail)
        self.assertIn("identity error", result.detail)
        self.assertIn("norm error", result.detail)
        self.assertIn("psi witness error", result.detail)

    def test_battery_covers_the_limiting_law_checks(self):
        """Test that the two-horizon, initial-value, transient, calibration and worker checks are registered."""
        names = {check.__name__.removeprefix("check_") for check in selftest.CHECKS}
        expected = {
            "ou_moments",
            "ou_two_horizon",
            "ou_initial_independence",
            "ou_transient",
            "exp_decay_two_horizon",
            "null_calibration",
            "worker_reproducibility",
            "boundary_identity",
            "deterministic_order",
        }
        self.assertLessEqual(expected, names)


class TestRunChecks(unittest.TestCase):
    """Test that run_checks reports every check."""

    def test_errors_become_failures(self):
        """Test that an svie-lift error inside a check is reported as a failed check."""

        def check_exploding():
            raise DivergenceError("path 3 diverged", path=3, step=7)

        def check_fine():
            return selftest.CheckResult("fine", True, "ok")

        with mock.patch.object(selftest, "CHECKS", (check_exploding, check_fine)):
            results = selftest.run_checks()
        self.assertEqual([result.name for result in results], ["exploding", "fine"])
        self.assertFalse(results[0].passed)
        self.assertIn("path 3 diverged", results[0].detail)
        self.assertTrue(results[1].passed)
