"""
The time coefficient b(t), its oscillation scale nu(t), and the quantities derived
from them: mu(t) = t/nu(t), its inverse, the separating time t_lambda and the loss weight.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Protocol, Tuple

import numpy as np

from . import exprlang
from .exceptions import ComputationError, ConfigurationError, OutOfRangeError
from .numerics import (
    POINTS_PER_OCTAVE,
    T_FLOOR,
    bisect_log,
    geometric_grid,
    grows_unboundedly,
)

logger = logging.getLogger(__name__)

CONSTANT = 'constant'
LOG = 'log'
LOG_POWER = 'log_power'
ITERATED_LOG = 'iterated_log'
CUSTOM = 'custom'
NU_KINDS = (CONSTANT, LOG, LOG_POWER, ITERATED_LOG, CUSTOM)

LOSS_NONE = 'none'
LOSS_FINITE = 'finite'
LOSS_ARBITRARILY_SMALL = 'arbitrarily_small'
LOSS_INFINITE = 'infinite'

NU_CHECK_POINTS = 1000


@dataclass(frozen=True)
class NuFunction:
    """Oscillation scale nu(t) on (0, T]: positive, and strictly decreasing unless constant."""
    kind: str
    T: float
    c: float = 1.0
    gamma: float = 1.0
    gammas: Tuple[float, ...] = ()
    expr: Optional[exprlang.Expr] = None

    def __post_init__(self):
        if self.kind not in NU_KINDS:
            raise ConfigurationError(f"unknown nu kind {self.kind!r}")
        if not self.T > 0:
            raise ConfigurationError(f"horizon T must be positive, got {self.T!r}")
        if self.kind == CONSTANT and not self.c > 0:
            raise ConfigurationError(f"constant nu must be positive, got {self.c!r}")
        if self.kind == LOG_POWER and not 0 < self.gamma < 1:
            raise ConfigurationError(f"log_power needs gamma in (0, 1), got {self.gamma!r}")
        if self.kind == ITERATED_LOG:
            if not self.gammas or not all(0 < g <= 1 for g in self.gammas):
                raise ConfigurationError("iterated_log needs at least one gamma, each in (0, 1]")
            object.__setattr__(self, 'gammas', tuple(float(g) for g in self.gammas))
        if self.kind == CUSTOM:
            if self.expr is None:
                raise ConfigurationError("custom nu needs an expression in t")
            extra = exprlang.free_variables(self.expr) - {'t'}
            if extra:
                raise exprlang.UnboundVariableError(sorted(extra)[0])
        self._check_shape()

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == CONSTANT:
            return np.full(t.shape, self.c) if t.shape else self.c
        if self.kind == CUSTOM:
            return exprlang.evaluate_array(self.expr, 't', t)[()]
        with np.errstate(divide='ignore', invalid='ignore'):
            inner = np.log(1.0 / t)
            if self.kind == LOG:
                value = inner
            elif self.kind == LOG_POWER:
                value = inner ** self.gamma
            else:
                value = inner
                nested = inner
                for gamma in self.gammas:
                    nested = np.log(nested)
                    value = value * nested ** gamma
        return value[()] if isinstance(value, np.ndarray) else value

    def _check_shape(self):
        ts = geometric_grid(self.T, NU_CHECK_POINTS - 1)
        values = np.asarray(self(ts), dtype=float)
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            bad = ts[~(np.isfinite(values) & (values > 0))][0]
            raise ConfigurationError(f"nu must be positive on (0, T]; fails at t={bad!r}")
        if self.kind != CONSTANT and not np.all(np.diff(values) > 0):
            raise ConfigurationError("nu must be strictly decreasing on (0, T]")

    @property
    def floor_constant(self):
        """C4 = inf nu = nu(T)."""
        return float(self(self.T))

    @property
    def diverges_at_zero(self):
        return self.kind in (LOG, LOG_POWER, ITERATED_LOG) or (
            self.kind == CUSTOM and float(self(T_FLOOR)) > 1e3 * float(self(self.T)))

    def inverse(self, value):
        """The t in (0, T] with nu(t) = value, for strictly decreasing nu."""
        if self.kind == CONSTANT:
            raise OutOfRangeError("a constant nu has no inverse")
        return bisect_log(lambda t: value - float(self(t)), T_FLOOR, self.T, what=f"nu^-1({value!r})")


class Coefficient(Protocol):
    def values(self, t): ...

    def derivatives(self, t, k): ...

    def square(self, t: float) -> float: ...

    def sample_points(self, T: float) -> np.ndarray: ...


@dataclass(frozen=True)
class ExprCoefficient:
    expr: exprlang.Expr

    def __post_init__(self):
        extra = exprlang.free_variables(self.expr) - {'t'}
        if extra:
            raise exprlang.UnboundVariableError(sorted(extra)[0])

    @cached_property
    def _scalar(self):
        return exprlang.compile_scalar(self.expr, 't')

    @cached_property
    def _derivative_exprs(self):
        first = exprlang.differentiate(self.expr, 't')
        return (self.expr, first, exprlang.differentiate(first, 't'))

    def values(self, t):
        return exprlang.evaluate_array(self.expr, 't', t)

    def derivatives(self, t, k):
        return exprlang.evaluate_array(self._derivative_exprs[k], 't', t)

    def square(self, t):
        value = self._scalar(t)
        return value * value

    def sample_points(self, T):
        return np.empty(0)


@dataclass(frozen=True)
class CoefficientProfile:
    b: Coefficient
    nu: NuFunction

    @property
    def T(self):
        return self.nu.T

    @cached_property
    def samples(self):
        ts = np.concatenate([geometric_grid(self.T, 400), self.b.sample_points(self.T)])
        return np.sort(ts)[::-1]

    @cached_property
    def b_max(self):
        """C2 estimated on the sample grid."""
        return float(np.max(self.b.values(self.samples)))

    @cached_property
    def b_min(self):
        return float(np.min(self.b.values(self.samples)))


@dataclass(frozen=True)
class AssumptionReport:
    C1: float
    C2: float
    C3: float
    C4: float
    assumption_one: bool
    assumption_two: bool
    worst_t: float
    ratio_suprema: Tuple[float, float] = field(default=(0.0, 0.0))

    @property
    def passed(self):
        return self.assumption_one and self.assumption_two

    def as_dict(self):
        return {
            'C1': self.C1, 'C2': self.C2, 'C3': self.C3, 'C4': self.C4,
            'assumption_one': self.assumption_one, 'assumption_two': self.assumption_two,
            'worst_t': self.worst_t, 'passed': self.passed,
        }


def _octave_running_suprema(ts, values, T, octaves):
    """Running supremum over t >= T*2^-m for m = 1..octaves (``ts`` sorted descending)."""
    running = np.maximum.accumulate(values)
    bounds = T * np.exp2(-np.arange(1, octaves + 1))
    last = np.searchsorted(-ts, -bounds, side='right') - 1
    return running[np.clip(last, 0, len(ts) - 1)]


def verify_assumptions(profile: CoefficientProfile, grid_size: int = 400) -> AssumptionReport:
    """
    Estimate C1..C4 as suprema over the geometric grid t_j = T*2^(-j/8), j = 0..grid_size,
    plus any per-piece samples the coefficient supplies.
    """
    T = profile.T
    ts = np.sort(np.concatenate([geometric_grid(T, grid_size), profile.b.sample_points(T)]))[::-1]
    ts = ts[ts >= T_FLOOR]
    b = profile.b.values(ts)
    scale = np.asarray(profile.nu(ts), dtype=float) / ts
    ratios = [np.abs(profile.b.derivatives(ts, k)) / scale ** k for k in (1, 2)]

    octaves = max(1, grid_size // POINTS_PER_OCTAVE)
    unbounded = any(grows_unboundedly(_octave_running_suprema(ts, r, T, octaves)) for r in ratios)
    combined = np.maximum(ratios[0], ratios[1])
    worst = int(np.argmax(combined))

    report = AssumptionReport(
        C1=float(np.min(b)),
        C2=float(np.max(b)),
        C3=float(combined[worst]),
        C4=profile.nu.floor_constant,
        assumption_one=bool(np.min(b) > 0 and np.all(np.isfinite(b))),
        assumption_two=not unbounded,
        worst_t=float(ts[worst]),
        ratio_suprema=(float(np.max(ratios[0])), float(np.max(ratios[1]))),
    )
    logger.debug("assumption check: %s", report.as_dict())
    return report


def _check_time(profile, t):
    if not T_FLOOR <= t <= profile.T:
        raise OutOfRangeError(f"t={t!r} outside (0, {profile.T!r}]")


def mu(profile: CoefficientProfile, t: float) -> float:
    _check_time(profile, t)
    return t / float(profile.nu(t))


def mu_inverse(profile: CoefficientProfile, y: float) -> float:
    top = mu(profile, profile.T)
    if not 0 < y <= top * (1 + 1e-15):
        raise OutOfRangeError(f"y={y!r} outside (0, mu(T)={top!r}]")
    if y >= top:
        return profile.T
    return bisect_log(lambda t: t / float(profile.nu(t)) - y, T_FLOOR, profile.T,
                      what=f"mu^-1({y!r})")


def t_lambda(profile: CoefficientProfile, lam: float, P: int) -> float:
    """The separating time: t * lam = 2^P nu(t)."""
    scale = 2.0 ** P
    g = lambda t: t * lam - scale * float(profile.nu(t))
    if g(profile.T) < 0:
        raise OutOfRangeError(
            f"separating line for lambda={lam!r}, P={P} lies beyond T={profile.T!r}; "
            f"lambda must be at least {scale * profile.nu.floor_constant / profile.T!r}")
    return bisect_log(g, T_FLOOR, profile.T, what=f"t_lambda({lam!r})")


def loss_weight(profile: CoefficientProfile, lam: float, P: int, c1: float) -> float:
    exponent = c1 * float(profile.nu(t_lambda(profile, lam, P)))
    try:
        return math.exp(exponent)
    except OverflowError:
        raise ComputationError(f"loss weight exp({exponent!r}) overflows") from None


def loss_exponent(profile: CoefficientProfile, P: int, c1: float, lambdas) -> float:
    """Least-squares slope of log(loss weight) against log(lambda)."""
    lambdas = np.asarray(lambdas, dtype=float)
    logs = [c1 * float(profile.nu(t_lambda(profile, lam, P))) for lam in lambdas]
    slope, _ = np.polyfit(np.log(lambdas), logs, 1)
    return float(slope)


def classify_loss(nu: NuFunction) -> str:
    if nu.kind == CUSTOM:
        raise ConfigurationError("a custom nu cannot be classified; use a catalog kind")
    return {
        CONSTANT: LOSS_NONE,
        LOG: LOSS_FINITE,
        LOG_POWER: LOSS_ARBITRARILY_SMALL,
        ITERATED_LOG: LOSS_INFINITE,
    }[nu.kind]
