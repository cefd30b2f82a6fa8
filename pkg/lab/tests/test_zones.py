import math

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from lab import exprlang
from lab.coeffs import CONSTANT, LOG, CoefficientProfile, ExprCoefficient, NuFunction, t_lambda
from lab.exceptions import ConfigurationError, OutOfRangeError, ZoneBoundaryError
from lab.zones import (
    ZoneKind,
    ZoneParams,
    classify,
    integral_bound,
    integral_bound_check,
    micro_energy,
    micro_energy_norms,
    symbol_class_estimate,
    zone_map,
)

UNIT_NU = NuFunction(CONSTANT, 0.5)
LOG_NU = NuFunction(LOG, 0.3)


def oscillating_profile():
    return CoefficientProfile(ExprCoefficient(exprlang.parse("2 + sin(log(1/t))")), LOG_NU)


class ClassifyTests(SimpleTestCase):
    def test_low_zone(self):
        self.assertEqual(classify(0.3, 5.0, ZoneParams(10.0, 4), UNIT_NU), ZoneKind.LOW)

    def test_pseudo_differential_zone(self):
        self.assertEqual(classify(0.25, 32.0, ZoneParams(10.0, 4), UNIT_NU), ZoneKind.PD)

    def test_boundary_belongs_to_upper_zone(self):
        self.assertEqual(classify(0.5, 32.0, ZoneParams(10.0, 4), UNIT_NU), ZoneKind.PE)

    def test_params_validation(self):
        with self.assertRaises(ConfigurationError):
            ZoneParams(0.0, 4)
        with self.assertRaises(ConfigurationError):
            ZoneParams(16.0, -1)
        with self.assertRaises(ConfigurationError):
            ZoneParams(0.5, 2).check_against(1.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(17.0, 1e6), st.floats(0.0, 1.0))
    def test_single_crossing(self, lam, fraction):
        params = ZoneParams(16.0, 2)
        profile = oscillating_profile()
        try:
            tl = t_lambda(profile, lam, params.P)
        except OutOfRangeError:
            tl = profile.T
        t = 1e-6 + fraction * (profile.T - 1e-6)
        zone = classify(t, lam, params, profile.nu)
        if t < tl * (1 - 1e-9):
            self.assertEqual(zone, ZoneKind.PD)
        elif t > tl * (1 + 1e-9):
            self.assertEqual(zone, ZoneKind.PE)

    def test_zone_map(self):
        rows = zone_map(oscillating_profile(), ZoneParams(16.0, 4), [0.01, 0.1, 0.3], [8.0, 1024.0])
        self.assertEqual(len(rows), 6)
        self.assertEqual([row[2] for row in rows], ['low', 'low', 'low', 'pd', 'pe', 'pe'])


class MicroEnergyTests(SimpleTestCase):
    def test_upper_zone(self):
        energy = micro_energy(0.4, 3.0, 1.0, 0.0, ZoneKind.PE, 2.0)
        self.assertEqual(energy.V, (6.0, 0.0))

    def test_low_zone(self):
        energy = micro_energy(0.4, 3.0, 0.0, 1j, ZoneKind.LOW, 2.0)
        self.assertAlmostEqual(energy.norm, 1.0, places=15)

    def test_continuity_across_separating_line(self):
        profile = oscillating_profile()
        lam = 4096.0
        tl = t_lambda(profile, lam, 4)
        b = float(profile.b.values(tl))
        below = micro_energy(tl, lam, 0.3 + 0.1j, 2.0, ZoneKind.PD, b)
        above = micro_energy(tl, lam, 0.3 + 0.1j, 2.0, ZoneKind.PE, b)
        self.assertAlmostEqual(abs(above.V[0]) / abs(below.V[0]), b, places=12)
        self.assertEqual(above.V[1], below.V[1])

    def test_vectorized_norms(self):
        u = np.array([1.0, 0.5j])
        ut = np.array([0.0, 2.0])
        b = np.array([2.0, 3.0])
        norms = micro_energy_norms(3.0, u, ut, ZoneKind.PE, b)
        expected = [micro_energy(0.0, 3.0, u[i], ut[i], ZoneKind.PE, b[i]).norm for i in range(2)]
        np.testing.assert_allclose(norms, expected)


class SymbolClassTests(SimpleTestCase):
    ts = np.geomspace(0.05, 0.25, 4)
    lambdas = np.array([2048.0, 4096.0, 8192.0])

    def setUp(self):
        self.profile = oscillating_profile()
        self.params = ZoneParams(16.0, 4)

    def inverse_square(self, t, lam):
        return (lam * self.profile.b.values(t)) ** -2

    def test_inverse_square_symbol(self):
        estimate = symbol_class_estimate(self.inverse_square, -2, 0, self.profile, self.params,
                                         self.ts, self.lambdas)
        self.assertTrue(estimate.passed)
        self.assertEqual(len(estimate.constants), 9)
        self.assertTrue(all(math.isfinite(c) for c in estimate.constants.values()))

    def test_linear_symbol(self):
        estimate = symbol_class_estimate(lambda t, lam: lam + 0 * t, 1, 0, self.profile, self.params,
                                         self.ts, self.lambdas)
        self.assertTrue(estimate.passed)
        self.assertAlmostEqual(max(estimate.constants.values()), 1.0, delta=1e-9)

    def test_embedding(self):
        base = symbol_class_estimate(self.inverse_square, -2, 0, self.profile, self.params,
                                     self.ts, self.lambdas)
        shifted = symbol_class_estimate(self.inverse_square, -1, -1, self.profile, self.params,
                                        self.ts, self.lambdas)
        self.assertTrue(shifted.passed)
        for key, value in shifted.constants.items():
            self.assertLessEqual(value, base.constants[key] / self.params.scale * (1 + 1e-9))

    def test_grid_touching_boundary(self):
        with self.assertRaises(ZoneBoundaryError):
            symbol_class_estimate(self.inverse_square, -2, 0, self.profile, self.params,
                                  [1e-3, 0.1], [64.0])


class IntegralBoundTests(SimpleTestCase):
    @staticmethod
    def remainder_like(profile):
        return lambda tau, lam: float(profile.nu(tau)) ** 2 / (lam * tau ** 2)

    def test_unit_nu(self):
        profile = CoefficientProfile(ExprCoefficient(exprlang.Num(1.0)), UNIT_NU)
        params = ZoneParams(16.0, 4)
        for lam in (2.0 ** 8, 2.0 ** 12):
            bound = integral_bound(self.remainder_like(profile), lam, profile, params)
            self.assertAlmostEqual(bound.lhs, 2.0 ** -4 - 1 / (lam * profile.T), delta=1e-12)
            self.assertLessEqual(bound.lhs, 2.0 ** -4)
            self.assertEqual(bound.rhs, 1.0)

    def test_log_nu(self):
        profile = CoefficientProfile(ExprCoefficient(exprlang.Num(1.0)), NuFunction(LOG, 0.5))
        check = integral_bound_check(self.remainder_like(profile), 2.0 ** np.arange(8, 17, 2),
                                     profile, ZoneParams(16.0, 4), allowed=3.0)
        self.assertTrue(check['passed'])
        self.assertLessEqual(check['constant'], 3.0)
        self.assertEqual(len(check['rows']), 5)

    def test_sup_inside_an_octave(self):
        # the running integral of sin(2 pi log2(tau/t_lambda))/tau peaks half an octave in
        profile = CoefficientProfile(ExprCoefficient(exprlang.Num(1.0)), UNIT_NU)
        params = ZoneParams(16.0, 4)
        lam = 2.0 ** 10
        start = t_lambda(profile, lam, params.P)

        def a(tau, lam):
            return math.sin(2 * math.pi * math.log2(tau / start)) / tau

        bound = integral_bound(a, lam, profile, params)
        self.assertAlmostEqual(bound.lhs, math.log(2) / math.pi, delta=1e-4)
