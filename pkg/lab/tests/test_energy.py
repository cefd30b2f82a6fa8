import math

from django.test import SimpleTestCase

from lab import exprlang
from lab.coeffs import ITERATED_LOG, LOG, LOG_POWER, CoefficientProfile, ExprCoefficient, NuFunction
from lab.energy import conservation_check, mode_energy, sobolev_energy, unit_profile, verify_estimate
from lab.exceptions import ConfigurationError
from lab.spectral import ModeCoefficients
from lab.zones import ZoneParams


class SobolevEnergyTests(SimpleTestCase):
    def test_single_mode(self):
        u = ModeCoefficients.from_pairs([(2.0, 1, 0.0)])
        ut = ModeCoefficients.from_pairs([(2.0, 1, 1.0)])
        self.assertAlmostEqual(sobolev_energy(u, ut, 1.0), 1.0)
        self.assertAlmostEqual(sobolev_energy(u, ut, 0.0), 0.25)

    def test_additive_over_modes(self):
        u = ModeCoefficients.from_pairs([(1.0, 1, 0.5), (3.0, 2, 1j)])
        ut = ModeCoefficients.from_pairs([(1.0, 1, 0.0), (3.0, 2, 2.0)])
        expected = float(mode_energy(1.0, 0.5, 0.0, 1.0) + mode_energy(3.0, 1j, 2.0, 1.0))
        self.assertAlmostEqual(sobolev_energy(u, ut, 1.0), expected)
        self.assertAlmostEqual(expected, 0.25 + 9.0 + 4.0)

    def test_empty(self):
        self.assertEqual(sobolev_energy(ModeCoefficients(), ModeCoefficients(), 1.0), 0.0)

    def test_mismatched_modes(self):
        u = ModeCoefficients.from_pairs([(1.0, 1, 1.0)])
        ut = ModeCoefficients.from_pairs([(2.0, 2, 1.0)])
        with self.assertRaises(ConfigurationError):
            sobolev_energy(u, ut, 1.0)


class ConservationTests(SimpleTestCase):
    def test_unit_coefficient_conserves(self):
        for lam in (1.0, 8.0, 64.0):
            for s in (1.0, 0.5):
                with self.subTest(lam=lam, s=s):
                    report = conservation_check(lam, 0.0, 1.0, s)
                    self.assertTrue(report.passed, report.drift)
                    self.assertLessEqual(report.drift, 1e-8)

    def test_report_keeps_threshold(self):
        report = conservation_check(4.0, 0.0, 0.5, 1.0, threshold=0.0)
        self.assertEqual(report.threshold, 0.0)
        self.assertEqual(report.passed, report.drift == 0.0)


class VerifyEstimateTests(SimpleTestCase):
    def test_unit_coefficient_has_no_loss(self):
        report = verify_estimate(unit_profile(1.0), ZoneParams(16.0, 4), [32.0, 64.0, 128.0])
        self.assertEqual(len(report.rows), 3)
        self.assertLessEqual(report.c1, 1e-6)
        self.assertTrue(report.passed)
        for row in report.rows:
            self.assertAlmostEqual(row.rhs, 2.0)
            self.assertLessEqual(row.ratio, 1.0)
            self.assertEqual(row.nu_t_lambda, 1.0)

    def test_rows_below_cut_do_not_enter_fit(self):
        report = verify_estimate(unit_profile(1.0), ZoneParams(16.0, 4), [4.0, 32.0])
        self.assertIsNone(report.rows[0].nu_t_lambda)
        self.assertIsNone(report.rows[0].c1)
        self.assertEqual(report.as_dict()['P'], 4)

    def test_log_coefficient_has_bounded_constant(self):
        profile = CoefficientProfile(ExprCoefficient(exprlang.parse("2 + sin(log(1/t))")), NuFunction(LOG, 0.3))
        report = verify_estimate(profile, ZoneParams(16.0, 4), [2.0 ** 9, 2.0 ** 10])
        self.assertTrue(all(math.isfinite(row.ratio) for row in report.rows))
        self.assertLess(report.c1, 2.0)


class LossConstantStabilityTests(SimpleTestCase):
    def fitted(self, nu, lambdas):
        profile = CoefficientProfile(ExprCoefficient(exprlang.parse("2 + sin(log(1/t))")), nu)
        return verify_estimate(profile, ZoneParams(16.0, 4), lambdas)

    def assertStable(self, report):
        self.assertTrue(math.isfinite(report.c1))
        self.assertGreaterEqual(report.c1_refined, report.c1)
        self.assertLessEqual(report.c1_refined - report.c1, 0.1 * report.c1 + 1e-3)

    def test_log_power(self):
        self.assertStable(self.fitted(NuFunction(LOG_POWER, 0.01, gamma=0.5), [2.0 ** 12, 2.0 ** 13, 2.0 ** 14]))

    def test_iterated_log(self):
        self.assertStable(self.fitted(NuFunction(ITERATED_LOG, 0.01, gammas=(1.0,)), [2.0 ** 14, 2.0 ** 15, 2.0 ** 16]))
