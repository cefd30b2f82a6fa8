"""
Decomposition of the (t, lambda) plane into the low-frequency zone and the two
zones separated by the curve t*lambda = 2^P nu(t), plus the zone-wise micro-energy
and numerical estimators for the symbol classes used on the upper zone.
"""
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Tuple

import numpy as np

from .coeffs import CoefficientProfile, NuFunction, t_lambda
from .exceptions import ConfigurationError, ZoneBoundaryError
from .numerics import PanelGrid, grows_unboundedly

logger = logging.getLogger(__name__)

STENCIL_T = 1e-4
STENCIL_LAMBDA = 1e-4
WIDE_STENCIL = 10.0
REFINEMENTS = 3
OCTAVE_PANELS = 32


class ZoneKind(str, enum.Enum):
    LOW = 'low'
    PD = 'pd'
    PE = 'pe'


@dataclass(frozen=True)
class ZoneParams:
    M: float = 16.0
    P: int = 4

    def __post_init__(self):
        if not self.M > 0:
            raise ConfigurationError(f"frequency cut M must be positive, got {self.M!r}")
        if int(self.P) != self.P or self.P < 0:
            raise ConfigurationError(f"zone exponent P must be a non-negative integer, got {self.P!r}")
        object.__setattr__(self, 'P', int(self.P))

    @property
    def scale(self):
        return 2.0 ** self.P

    def check_against(self, lowest_frequency):
        if self.M < lowest_frequency:
            raise ConfigurationError(
                f"M={self.M!r} is below the lowest frequency {lowest_frequency!r}")


def classify(t: float, lam: float, params: ZoneParams, nu: NuFunction) -> ZoneKind:
    """Zone of (t, lambda); points on the separating line belong to the upper zone."""
    if lam <= params.M:
        return ZoneKind.LOW
    if t <= 0:
        return ZoneKind.PD
    if t * lam < params.scale * float(nu(t)):
        return ZoneKind.PD
    return ZoneKind.PE


@dataclass(frozen=True)
class MicroEnergy:
    V: Tuple[complex, complex]
    zone: ZoneKind

    @property
    def norm(self):
        return math.hypot(abs(self.V[0]), abs(self.V[1]))


def micro_energy(t, lam, u, ut, zone: ZoneKind, b: float) -> MicroEnergy:
    """``b`` is the coefficient value b(t); the second component is D_t u = -i u_t."""
    second = -1j * complex(ut)
    if zone == ZoneKind.LOW:
        first = complex(u)
    elif zone == ZoneKind.PD:
        first = lam * complex(u)
    else:
        first = lam * b * complex(u)
    return MicroEnergy((first, second), zone)


def micro_energy_norms(lam, u, ut, zone: ZoneKind, b_values):
    """Vectorized |V| along a trajectory in one zone."""
    u, ut = np.asarray(u), np.asarray(ut)
    if zone == ZoneKind.LOW:
        first = np.abs(u)
    elif zone == ZoneKind.PD:
        first = lam * np.abs(u)
    else:
        first = lam * np.asarray(b_values) * np.abs(u)
    return np.hypot(first, np.abs(ut))


def zone_map(profile: CoefficientProfile, params: ZoneParams, ts, lambdas) -> List[Tuple[float, float, str]]:
    return [(float(t), float(lam), classify(t, lam, params, profile.nu).value)
            for lam in lambdas for t in ts]


# Symbol classes

_FIRST = np.array([-0.5, 0.0, 0.5])
_SECOND = np.array([1.0, -2.0, 1.0])
_IDENTITY = np.array([0.0, 1.0, 0.0])
_STENCILS = (_IDENTITY, _FIRST, _SECOND)


@dataclass(frozen=True)
class SymbolEstimate:
    m1: float
    m2: float
    constants: Dict[Tuple[int, int], float]
    history: Dict[Tuple[int, int], Tuple[float, ...]] = field(repr=False)
    passed: bool

    def as_dict(self):
        return {
            'm1': self.m1, 'm2': self.m2, 'passed': self.passed,
            'constants': {f"{k},{a}": c for (k, a), c in sorted(self.constants.items())},
        }


def refine_geometric(values):
    values = np.asarray(values, dtype=float)
    midpoints = np.sqrt(values[:-1] * values[1:])
    return np.sort(np.concatenate([values, midpoints]))


def stencil_steps(t, lam, order=0):
    """Central-difference steps; derivatives of total order three or more use steps ten times wider."""
    widen = WIDE_STENCIL if order >= 3 else 1.0
    return widen * STENCIL_T * t, np.maximum(widen, widen * STENCIL_LAMBDA * lam)


def _check_inside(profile, params, t, lam, h_t, h_lam):
    t_lo, lam_lo = t - h_t, lam - h_lam
    nu_lo = np.asarray(profile.nu(np.minimum(t_lo, t)), dtype=float)
    outside = (lam_lo <= params.M) | (t_lo * lam_lo <= params.scale * nu_lo) | (t + h_t > profile.T)
    if np.any(outside):
        where = np.argwhere(outside)[0]
        raise ZoneBoundaryError(
            f"estimator grid touches the zone boundary near t={t[tuple(where)]!r}, "
            f"lambda={lam[tuple(where)]!r}")


def _stencil_samples(symbol, t, lam, h_t, h_lam):
    offsets = np.array([-1.0, 0.0, 1.0])
    tt = t[..., None, None] + offsets[:, None] * h_t[..., None, None]
    ll = lam[..., None, None] + offsets[None, :] * h_lam[..., None, None]
    return np.asarray(symbol(tt, ll), dtype=complex)


def _stencil_order(k, a):
    return 3 if k + a >= 3 else 0


def _class_ratios(symbol, m1, m2, profile, params, ts, lambdas, kmax, amax):
    t, lam = np.meshgrid(np.asarray(ts, float), np.asarray(lambdas, float), indexing='ij')
    steps = {}
    for order in {_stencil_order(k, a) for k in range(kmax + 1) for a in range(amax + 1)}:
        h_t, h_lam = stencil_steps(t, lam, order)
        _check_inside(profile, params, t, lam, h_t, h_lam)
        steps[order] = (h_t, h_lam, _stencil_samples(symbol, t, lam, h_t, h_lam))
    scale = np.asarray(profile.nu(t), dtype=float) / t
    ratios = {}
    for k in range(kmax + 1):
        for a in range(amax + 1):
            h_t, h_lam, samples = steps[_stencil_order(k, a)]
            weights = np.outer(_STENCILS[k], _STENCILS[a])
            derivative = np.einsum('...ij,ij->...', samples, weights) / (h_t ** k * h_lam ** a)
            bound = lam ** (m1 - a) * scale ** (m2 + k)
            ratios[(k, a)] = float(np.max(np.abs(derivative) / bound))
    return ratios


def symbol_class_estimate(symbol: Callable, m1: float, m2: float, profile: CoefficientProfile,
                          params: ZoneParams, ts, lambdas, kmax: int = 2, amax: int = 2) -> SymbolEstimate:
    """
    Estimate sup |D_t^k D_lambda^a a| / (lambda^(m1-a) (nu/t)^(m2+k)) for k <= kmax, a <= amax.

    ``symbol(t, lambda)`` must accept broadcast arrays. The grid is refined geometrically
    three times; a class fails when a supremum keeps growing by more than 1%.
    """
    history = {}
    for _ in range(REFINEMENTS + 1):
        ratios = _class_ratios(symbol, m1, m2, profile, params, ts, lambdas, kmax, amax)
        for key, value in ratios.items():
            history.setdefault(key, []).append(value)
        ts, lambdas = refine_geometric(ts), refine_geometric(lambdas)
    passed = not any(grows_unboundedly(values) for values in history.values())
    constants = {key: max(values) for key, values in history.items()}
    return SymbolEstimate(m1, m2, constants, {k: tuple(v) for k, v in history.items()}, passed)


@dataclass(frozen=True)
class IntegralBound:
    lam: float
    t_lambda: float
    lhs: float
    rhs: float

    @property
    def constant(self):
        return self.lhs / self.rhs


def _octave_pieces(a, b):
    octaves = max(1, math.ceil(math.log2(b / a)))
    return np.geomspace(a, b, octaves + 1)


def integral_bound(a: Callable[[float, float], float], lam: float, profile: CoefficientProfile,
                   params: ZoneParams) -> IntegralBound:
    """
    sup over t in [t_lambda, T] of |int_{t_lambda}^t a(tau, lambda) dtau| against nu(t_lambda).

    The running integral is taken at every node of a panel grid on each octave, so the sup
    also sees extrema inside an octave.
    """
    start = t_lambda(profile, lam, params.P)
    edges = _octave_pieces(start, profile.T)
    offset, lhs = 0.0, 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        grid = PanelGrid(lo, hi, OCTAVE_PANELS)
        running = offset + grid.cumulative(np.array([a(tau, lam) for tau in grid.nodes]))
        lhs = max(lhs, float(np.max(np.abs(running))))
        offset = float(running[-1])
    return IntegralBound(float(lam), start, lhs, float(profile.nu(start)))


def integral_bound_check(a: Callable[[float, float], float], lambdas, profile: CoefficientProfile,
                         params: ZoneParams, allowed: float = math.inf):
    """Smallest constant C with |int a| <= C nu(t_lambda) over the lambda grid."""
    rows = [integral_bound(a, lam, profile, params) for lam in lambdas]
    constant = max(row.constant for row in rows)
    return {'rows': rows, 'constant': constant, 'passed': constant <= allowed}
