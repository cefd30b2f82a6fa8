import math

import numpy as np
from django.test import SimpleTestCase

from lab import exprlang
from lab.exceptions import ConfigurationError, ResolutionError, UnknownModeError
from lab.spectral import (
    PERIODIC,
    MagneticOperator1D,
    ModeCoefficients,
    QuadratureGrid,
    apply_symbol,
    dual_norm,
    eigen_modes,
    fd_apply,
    fd_grid,
    fd_spectrum,
    forward_transform,
    inverse_transform,
    poincare_constant,
    sobolev_norm,
)

MINUS_ONE = exprlang.parse("-1")


class EigenModeTests(SimpleTestCase):
    def test_constant_potential_spectrum(self):
        op = MagneticOperator1D(math.pi, MINUS_ONE)
        modes = eigen_modes(op, 3)
        self.assertEqual([round(m.eigenvalue, 12) for m in modes], [1.0, 4.0, 9.0])

        x = np.linspace(0.1, 3.0, 7)
        expected = math.sqrt(2 / math.pi) * np.sin(2 * x) * np.exp(-1j * x)
        np.testing.assert_allclose(modes[1].values(x), expected, atol=1e-13)

    def test_twenty_modes_to_machine_precision(self):
        op = MagneticOperator1D(math.pi, MINUS_ONE)
        modes = eigen_modes(op, 20)
        n = np.arange(1, 21)
        np.testing.assert_allclose([m.eigenvalue for m in modes], n ** 2, rtol=1e-12)
        x = np.linspace(0.05, 3.1, 13)
        for mode in modes:
            expected = math.sqrt(2 / math.pi) * np.sin(mode.index * x) * np.exp(-1j * x)
            np.testing.assert_allclose(mode.values(x), expected, atol=1e-12)
        grid = QuadratureGrid.for_modes(modes)
        basis = np.array([m.values(grid.nodes) for m in modes])
        gram = np.conj(basis) @ (grid.weights * basis).T
        np.testing.assert_allclose(gram, np.eye(20), atol=1e-12)

    def test_zero_potential_modes_are_real(self):
        modes = eigen_modes(MagneticOperator1D(math.pi), 3)
        x = np.linspace(0.0, math.pi, 11)
        np.testing.assert_allclose([m.eigenvalue for m in modes], [1.0, 4.0, 9.0])
        self.assertTrue(np.all(modes[2].values(x).imag == 0))

    def test_linear_potential_matches_finite_differences(self):
        op = MagneticOperator1D(math.pi, exprlang.parse("x"))
        fd = fd_spectrum(op, n=2000, count=3) ** 2
        np.testing.assert_allclose(fd, [1.0, 4.0, 9.0], rtol=5e-4)
        np.testing.assert_allclose([m.eigenvalue for m in eigen_modes(op, 3)], [1.0, 4.0, 9.0])

    def test_finite_difference_residual_is_second_order(self):
        op = MagneticOperator1D(math.pi, exprlang.parse("x"))
        mode = eigen_modes(op, 2)[1]

        def residual(n):
            x, _ = fd_grid(op, n)
            samples = mode.values(x)
            error = fd_apply(op, n, samples) - mode.eigenvalue * samples
            return float(np.max(np.abs(error)) / (mode.eigenvalue * np.max(np.abs(samples))))

        coarse, fine = residual(500), residual(1000)
        self.assertLess(fine, 1e-4)
        self.assertGreater(coarse / fine, 3.0)

    def test_periodic_pairs(self):
        op = MagneticOperator1D(2 * math.pi, exprlang.Num(1.0), PERIODIC)
        modes = eigen_modes(op, 4)
        self.assertEqual([m.index for m in modes], [1, -1, 2, -2])
        np.testing.assert_allclose([m.lam for m in modes], [1.0, 1.0, 2.0, 2.0])

    def test_periodic_needs_quantized_flux(self):
        with self.assertRaises(ConfigurationError):
            MagneticOperator1D(2 * math.pi, exprlang.Num(0.5), PERIODIC)

    def test_finite_differences_are_dirichlet_only(self):
        with self.assertRaises(ConfigurationError):
            fd_spectrum(MagneticOperator1D(2 * math.pi, boundary=PERIODIC))

    def test_bad_length(self):
        with self.assertRaises(ConfigurationError):
            MagneticOperator1D(0.0)

    def test_poincare_constant(self):
        self.assertAlmostEqual(poincare_constant(MagneticOperator1D(math.pi, MINUS_ONE)), 1.0, places=14)
        self.assertAlmostEqual(poincare_constant(MagneticOperator1D(2 * math.pi)), 2.0, places=14)


class TransformTests(SimpleTestCase):
    def setUp(self):
        self.op = MagneticOperator1D(math.pi, exprlang.parse("x"))
        self.modes = eigen_modes(self.op, 5)
        self.grid = QuadratureGrid.for_modes(self.modes)

    def test_orthonormality(self):
        coeffs = forward_transform(self.modes[0].values(self.grid.nodes), self.modes, self.grid)
        np.testing.assert_allclose(coeffs.value_array(), [1, 0, 0, 0, 0], atol=1e-8)

    def test_linearity(self):
        samples = 2 * self.modes[0].values(self.grid.nodes) + 1j * self.modes[1].values(self.grid.nodes)
        coeffs = forward_transform(samples, self.modes, self.grid)
        np.testing.assert_allclose(coeffs.value_array(), [2, 1j, 0, 0, 0], atol=1e-8)

    def test_parabola_sine_series(self):
        modes = eigen_modes(MagneticOperator1D(math.pi), 5)
        grid = QuadratureGrid.for_modes(modes)
        x = grid.nodes
        coeffs = forward_transform(x * (math.pi - x), modes, grid)
        n = np.arange(1, 6)
        expected = math.sqrt(2 / math.pi) * 2 / n ** 3 * (1 - (-1.0) ** n)
        np.testing.assert_allclose(coeffs.value_array(), expected, atol=1e-12)

    def test_truncation_error_is_tail_energy(self):
        modes = eigen_modes(MagneticOperator1D(math.pi), 5)
        grid = QuadratureGrid.for_modes(modes)
        x = grid.nodes
        f = x * (math.pi - x)
        coeffs = forward_transform(f, modes, grid)
        residual = f - inverse_transform(coeffs, modes, x)
        error = float(np.sum(grid.weights * np.abs(residual) ** 2))
        tail = math.pi ** 5 / 30 - float(np.sum(np.abs(coeffs.value_array()) ** 2))
        self.assertAlmostEqual(error / tail, 1.0, delta=1e-6)

    def test_inverse_of_unit_vector(self):
        coeffs = ModeCoefficients.for_modes(self.modes[:1], [1.0])
        x = np.linspace(0.0, math.pi, 9)
        np.testing.assert_allclose(inverse_transform(coeffs, self.modes, x), self.modes[0].values(x))

    def test_empty_coefficients(self):
        x = np.linspace(0.0, math.pi, 9)
        self.assertTrue(np.all(inverse_transform(ModeCoefficients(), self.modes, x) == 0))
        self.assertEqual(sobolev_norm(ModeCoefficients(), 1.0), 0.0)

    def test_unknown_mode(self):
        coeffs = ModeCoefficients.from_pairs([(7.0, 7, 1.0)])
        with self.assertRaises(UnknownModeError):
            inverse_transform(coeffs, self.modes, np.array([0.5]))

    def test_coarse_grid_is_rejected(self):
        modes = eigen_modes(self.op, 200)
        grid = QuadratureGrid.for_frequency(math.pi, 1.0)
        with self.assertRaises(ResolutionError):
            forward_transform(np.zeros(grid.nodes.shape), modes, grid)

    def test_duplicate_modes(self):
        with self.assertRaises(ValueError):
            ModeCoefficients((1.0, 1.0), (1, 1), (1.0, 2.0))


class NormTests(SimpleTestCase):
    def test_single_mode(self):
        coeffs = ModeCoefficients.from_pairs([(2.0, 2, 1.0)])
        self.assertEqual(sobolev_norm(coeffs, 1.0), 2.0)
        self.assertEqual(sobolev_norm(coeffs, 0.0), 1.0)
        self.assertEqual(dual_norm(coeffs), 0.5)

    def test_symbol_application(self):
        coeffs = ModeCoefficients.from_pairs([(1.0, 1, 1.0), (2.0, 2, 1.0)])
        scaled = apply_symbol(coeffs, lambda lam: lam ** 2)
        np.testing.assert_allclose(scaled.value_array(), [1.0, 4.0])
        self.assertEqual(scaled.lambdas, coeffs.lambdas)
