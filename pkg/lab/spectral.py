"""
Eigenbasis of the one-dimensional magnetic operator (i d/dx + a(x))^2 and the
generalized Fourier transform built on it.

The gauge factor e^{iA(x)}, A(x) = int_0^x a, conjugates the operator to -d^2/dx^2:
(i d/dx + a)(f e^{iA}) = e^{iA} i f'. Eigenfunctions are therefore trigonometric
modes multiplied by the gauge factor and the spectrum does not depend on a.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence, Tuple

import numpy as np
from scipy import linalg

from . import exprlang
from .exceptions import ConfigurationError, ResolutionError, UnknownModeError
from .numerics import gauss_legendre

logger = logging.getLogger(__name__)

DIRICHLET = 'dirichlet'
PERIODIC = 'periodic'
BOUNDARIES = (DIRICHLET, PERIODIC)

MIN_POINTS_PER_WAVELENGTH = 16
DEFAULT_POINTS_PER_WAVELENGTH = 32
FLUX_TOLERANCE = 1e-9

_GAUGE_NODES, _GAUGE_WEIGHTS = gauss_legendre(0.0, 1.0, panels=8, order=32)


@dataclass(frozen=True)
class MagneticOperator1D:
    length: float
    potential: exprlang.Expr = exprlang.Num(0.0)
    boundary: str = DIRICHLET

    def __post_init__(self):
        if not self.length > 0:
            raise ConfigurationError(f"domain length must be positive, got {self.length!r}")
        if self.boundary not in BOUNDARIES:
            raise ConfigurationError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")
        extra = exprlang.free_variables(self.potential) - {'x'}
        if extra:
            raise exprlang.UnboundVariableError(sorted(extra)[0])
        if self.boundary == PERIODIC:
            quanta = self.flux / (2 * math.pi)
            if abs(quanta - round(quanta)) > FLUX_TOLERANCE:
                raise ConfigurationError(
                    f"periodic boundary needs flux in 2*pi*Z, got flux/(2*pi) = {quanta!r}")

    def gauge_phase(self, x):
        """A(x) = int_0^x a(s) ds by a fixed composite Gauss-Legendre rule on [0, x]."""
        x = np.asarray(x, dtype=float)
        if not exprlang.free_variables(self.potential):
            return exprlang.evaluate(self.potential) * x
        points = x[..., None] * _GAUGE_NODES
        values = exprlang.evaluate_array(self.potential, 'x', points)
        return x * (values @ _GAUGE_WEIGHTS)

    @cached_property
    def flux(self):
        return float(self.gauge_phase(self.length))

    def potential_values(self, x):
        return exprlang.evaluate_array(self.potential, 'x', x)


@dataclass(frozen=True)
class EigenMode:
    """
    One eigenpair. ``index`` is N >= 1 for Dirichlet and the signed lattice offset
    j != 0 for periodic boundary (both signs share the frequency 2*pi*|j|/L).
    """
    index: int
    lam: float
    operator: MagneticOperator1D = field(repr=False, compare=False)

    @property
    def eigenvalue(self):
        return self.lam ** 2

    def base(self, x):
        x = np.asarray(x, dtype=float)
        L = self.operator.length
        if self.operator.boundary == DIRICHLET:
            return math.sqrt(2.0 / L) * np.sin(self.index * math.pi * x / L)
        return np.exp(2j * math.pi * self.index * x / L) / math.sqrt(L)

    def values(self, x):
        return self.base(x) * np.exp(1j * self.operator.gauge_phase(x))


def _periodic_offsets(count):
    offsets = []
    j = 1
    while len(offsets) < count:
        offsets.extend([j, -j])
        j += 1
    return offsets[:count]


def eigen_modes(op: MagneticOperator1D, count: int) -> Tuple[EigenMode, ...]:
    if count < 1:
        raise ConfigurationError(f"mode count must be at least 1, got {count!r}")
    if op.boundary == DIRICHLET:
        return tuple(EigenMode(n, n * math.pi / op.length, op) for n in range(1, count + 1))
    return tuple(EigenMode(j, 2 * math.pi * abs(j) / op.length, op)
                 for j in _periodic_offsets(count))


def poincare_constant(op: MagneticOperator1D) -> float:
    """Best constant C with ||w|| <= C ||(i d/dx + a) w||, i.e. 1/lambda_1."""
    return 1.0 / eigen_modes(op, 1)[0].lam


@dataclass(frozen=True)
class QuadratureGrid:
    length: float
    nodes: np.ndarray = field(repr=False, compare=False)
    weights: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def for_frequency(cls, length, max_lam, per_wavelength=DEFAULT_POINTS_PER_WAVELENGTH, order=16):
        wavelengths = length * max_lam / (2 * math.pi)
        panels = max(4, math.ceil(per_wavelength * wavelengths / order))
        nodes, weights = gauss_legendre(0.0, length, panels, order)
        return cls(length, nodes, weights)

    @classmethod
    def for_modes(cls, modes: Sequence[EigenMode], **kwargs):
        return cls.for_frequency(modes[0].operator.length, max(m.lam for m in modes), **kwargs)

    def points_per_wavelength(self, lam):
        if lam <= 0:
            return math.inf
        return self.nodes.size / (self.length * lam / (2 * math.pi))


@dataclass(frozen=True)
class ModeCoefficients:
    """Spectral content of a function: parallel tuples sorted by (lambda, index)."""
    lambdas: Tuple[float, ...] = ()
    indices: Tuple[int, ...] = ()
    values: Tuple[complex, ...] = ()

    def __post_init__(self):
        if not len(self.lambdas) == len(self.indices) == len(self.values):
            raise ValueError("lambdas, indices and values must have equal length")
        keys = list(zip(self.lambdas, self.indices))
        if keys != sorted(keys):
            raise ValueError("mode coefficients must be sorted by (lambda, index)")
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate mode in coefficients")

    @classmethod
    def from_pairs(cls, entries):
        """Build from (lambda, index, value) triples in any order."""
        ordered = sorted(((float(lam), int(idx), complex(val)) for lam, idx, val in entries),
                         key=lambda e: (e[0], e[1]))
        if not ordered:
            return cls()
        lambdas, indices, values = zip(*ordered)
        return cls(tuple(lambdas), tuple(indices), tuple(values))

    @classmethod
    def for_modes(cls, modes: Sequence[EigenMode], values):
        return cls.from_pairs((m.lam, m.index, v) for m, v in zip(modes, values))

    def __len__(self):
        return len(self.values)

    def lambda_array(self):
        return np.asarray(self.lambdas, dtype=float)

    def value_array(self):
        return np.asarray(self.values, dtype=complex)

    def rows(self):
        return [(lam, val.real, val.imag) for lam, val in zip(self.lambdas, self.values)]


def _check_resolution(grid, modes):
    top = max(m.lam for m in modes)
    density = grid.points_per_wavelength(top)
    if density < MIN_POINTS_PER_WAVELENGTH:
        required = math.ceil(MIN_POINTS_PER_WAVELENGTH * grid.length * top / (2 * math.pi))
        raise ResolutionError(
            f"grid has {grid.nodes.size} nodes ({density:.1f} per wavelength at lambda={top!r}); "
            f"at least {required} are required")


def mode_matrix(modes: Sequence[EigenMode], x) -> np.ndarray:
    return np.vstack([m.values(x) for m in modes])


def forward_transform(samples, modes: Sequence[EigenMode], grid: QuadratureGrid) -> ModeCoefficients:
    """f_hat(lambda) = int_0^L f conj(phi_lambda) dx on the quadrature grid."""
    samples = np.asarray(samples, dtype=complex)
    if samples.shape != grid.nodes.shape:
        raise ValueError("samples must be given on the quadrature grid nodes")
    _check_resolution(grid, modes)
    coefficients = np.conj(mode_matrix(modes, grid.nodes)) @ (grid.weights * samples)
    return ModeCoefficients.for_modes(modes, coefficients)


def inverse_transform(coeffs: ModeCoefficients, modes: Sequence[EigenMode], x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    result = np.zeros(x.shape, dtype=complex)
    if not len(coeffs):
        return result
    by_key = {(m.lam, m.index): m for m in modes}
    for lam, idx, value in zip(coeffs.lambdas, coeffs.indices, coeffs.values):
        mode = by_key.get((lam, idx))
        if mode is None:
            raise UnknownModeError(f"no mode with lambda={lam!r} (index {idx}) in the basis")
        result += value * mode.values(x)
    return result


def sobolev_norm(coeffs: ModeCoefficients, s: float) -> float:
    if not len(coeffs):
        return 0.0
    weights = coeffs.lambda_array() ** (2 * s)
    return float(np.sqrt(np.sum(weights * np.abs(coeffs.value_array()) ** 2)))


def dual_norm(coeffs: ModeCoefficients) -> float:
    return sobolev_norm(coeffs, -1.0)


def apply_symbol(coeffs: ModeCoefficients, symbol: Callable[[np.ndarray], np.ndarray]) -> ModeCoefficients:
    """The operator F(sqrt(H^2)) acting mode-wise as f_hat(lambda) -> F(lambda) f_hat(lambda)."""
    if not len(coeffs):
        return coeffs
    scaled = np.asarray(symbol(coeffs.lambda_array()), dtype=complex) * coeffs.value_array()
    return ModeCoefficients(coeffs.lambdas, coeffs.indices, tuple(complex(v) for v in scaled))


# Finite-difference reference discretization (Dirichlet rows)

def fd_grid(op: MagneticOperator1D, n: int):
    h = op.length / (n + 1)
    return h * np.arange(1, n + 1), h


def _fd_bands(op, n):
    x, h = fd_grid(op, n)
    a = op.potential_values(np.concatenate([[0.0], x, [op.length]]))
    diagonal = 2.0 / h ** 2 + a[1:-1] ** 2
    upper = -1.0 / h ** 2 + 1j * (a[1:-2] + a[2:-1]) / (2 * h)
    return diagonal, upper


def fd_spectrum(op: MagneticOperator1D, n: int = 2000, count: int = 3) -> np.ndarray:
    """Lowest ``count`` frequencies of the second-order Hermitian discretization."""
    if op.boundary != DIRICHLET:
        raise ConfigurationError("the finite-difference reference supports Dirichlet boundary only")
    diagonal, upper = _fd_bands(op, n)
    bands = np.zeros((2, n), dtype=complex)
    bands[0, 1:] = upper
    bands[1, :] = diagonal
    eigenvalues = linalg.eig_banded(bands, lower=False, eigvals_only=True,
                                    select='i', select_range=(0, count - 1))
    logger.debug("finite-difference spectrum on %d points: %s", n, eigenvalues)
    return np.sqrt(eigenvalues)


def fd_apply(op: MagneticOperator1D, n: int, samples) -> np.ndarray:
    """Apply the discretized operator to interior samples with zero Dirichlet values."""
    diagonal, upper = _fd_bands(op, n)
    u = np.asarray(samples, dtype=complex)
    result = diagonal * u
    result[:-1] += upper * u[1:]
    result[1:] += np.conj(upper) * u[:-1]
    return result
