"""
Single-mode solvers for u'' + lambda^2 b(t)^2 u = 0.

Three independent routes produce the propagator of a mode: an adaptive embedded
Runge-Kutta integrator, the matrizant (Peano-Baker) series evaluated through its
Volterra recursion, and the two-step diagonalization with WKB phases on the upper
zone. Propagators follow the convention d/dt E = i A E, E(s, s) = I, and act on
(u, D_t u) with D_t = -i d/dt unless stated otherwise.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import integrate

from .coeffs import CoefficientProfile, t_lambda
from .exceptions import (
    ComputationError,
    ConfigurationError,
    IntegrationError,
    MatrizantError,
    OutOfRangeError,
)
from .numerics import PanelGrid
from .zones import ZoneParams

logger = logging.getLogger(__name__)

RTOL = 1e-10
ATOL = 1e-12
MAX_WKB_FREQUENCY = 2.0 ** 20
MATRIZANT_TERMS = 40
MATRIZANT_TOL = 1e-12
SEGMENT_BUDGET = 1.0

DIAGONALIZER = np.array([[1.0, -1.0], [1.0, 1.0]])
DIAGONALIZER_INV = 0.5 * np.array([[1.0, 1.0], [-1.0, 1.0]])
IDENTITY = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class ModeState:
    t: float
    u: complex
    ut: complex
    lam: float

    def as_vector(self):
        return np.array([self.u, self.ut], dtype=complex)

    @property
    def wronskian(self):
        return float(np.imag(np.conj(self.u) * self.ut))


@dataclass(frozen=True)
class Trajectory:
    lam: float
    t: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    ut: np.ndarray = field(repr=False)

    def __len__(self):
        return self.t.size

    def state(self, i) -> ModeState:
        return ModeState(float(self.t[i]), complex(self.u[i]), complex(self.ut[i]), self.lam)

    @property
    def final(self) -> ModeState:
        return self.state(-1)

    @property
    def wronskian(self):
        return np.imag(np.conj(self.u) * self.ut)

    def rows(self):
        return [(t, u.real, u.imag, ut.real, ut.imag) for t, u, ut in zip(self.t, self.u, self.ut)]


@dataclass(frozen=True)
class FundamentalSolution:
    matrix: np.ndarray = field(repr=False)
    s: float
    t: float
    lam: float
    method: str
    error_bound: float = 0.0
    terms: int = 0

    def __matmul__(self, other: 'FundamentalSolution') -> 'FundamentalSolution':
        return FundamentalSolution(self.matrix @ other.matrix, other.s, self.t, self.lam,
                                   self.method, self.error_bound + other.error_bound)

    @property
    def norm(self):
        return float(np.linalg.norm(self.matrix, 2))


def _check_interval(profile, t0, t1):
    for t in (t0, t1):
        if not 0 <= t <= profile.T:
            raise OutOfRangeError(f"t={t!r} outside [0, {profile.T!r}]")


# Adaptive integration

def integrate_mode(profile: CoefficientProfile, lam: float, t0: float, t1: float, init: ModeState,
                   t_eval=None, rtol: float = RTOL, atol: float = ATOL) -> Trajectory:
    """
    Solve u'' + lambda^2 b^2 u = 0 from ``init`` at t0 to t1 (either direction) with DOP853.

    The integrated state is (lambda u, u_t) so both components carry the same scale.
    """
    if not lam > 0:
        raise ConfigurationError(f"mode frequency must be positive, got {lam!r}")
    _check_interval(profile, t0, t1)
    square = profile.b.square

    def rhs(t, y):
        return np.array([lam * y[1], -lam * square(t) * y[0]])

    span = abs(t1 - t0)
    if span == 0:
        return Trajectory(lam, np.array([t0]), np.array([init.u], dtype=complex),
                          np.array([init.ut], dtype=complex))
    first_step = min(0.1 / (max(lam, 1.0) * profile.b_max), span)
    y0 = np.array([lam * init.u, init.ut], dtype=complex)
    solution = integrate.solve_ivp(rhs, (t0, t1), y0, method='DOP853',
                                   t_eval=t_eval, rtol=rtol, atol=atol, first_step=first_step)
    if not solution.success:
        raise IntegrationError(solution.message, t=float(solution.t[-1]) if solution.t.size else t0)
    logger.debug("lambda=%g integrated over [%g, %g] in %d evaluations", lam, t0, t1, solution.nfev)
    return Trajectory(lam, solution.t, solution.y[0] / lam, solution.y[1])


def integrate_propagator(profile: CoefficientProfile, lam: float, s: float, t: float, t_eval=None,
                         rtol: float = RTOL, atol: float = ATOL) -> Tuple[np.ndarray, np.ndarray]:
    """Integrator propagators E(tau, s) on (u, D_t u) at the ``t_eval`` times (default: t only)."""
    times = np.array([t], dtype=float) if t_eval is None else np.asarray(t_eval, dtype=float)
    columns = []
    for u, ut in ((1.0, 0.0), (0.0, 1j)):
        trajectory = integrate_mode(profile, lam, s, t, ModeState(s, u, ut, lam),
                                    t_eval=times, rtol=rtol, atol=atol)
        columns.append(np.stack([trajectory.u, -1j * trajectory.ut], axis=-1))
    return times, np.stack(columns, axis=-1)


def integrator_fundamental(profile, lam, s, t, **kwargs) -> FundamentalSolution:
    _, matrices = integrate_propagator(profile, lam, s, t, **kwargs)
    return FundamentalSolution(matrices[-1], s, t, lam, 'integrator')


def rescale_propagators(matrices, first_at_t, first_at_s):
    """Change coordinates from (u, D_t u) to (c(t) u, D_t u)."""
    matrices = np.array(matrices, dtype=complex)
    first_at_t = np.broadcast_to(np.asarray(first_at_t, dtype=float), matrices.shape[:-2])
    matrices[..., 0, :] *= first_at_t[..., None]
    matrices[..., :, 0] /= first_at_s
    return matrices


# First-order systems of the lower zones

def low_zone_system(profile: CoefficientProfile, lam: float) -> Callable:
    """[[0, 1], [lambda^2 b^2, 0]] acting on (u, D_t u)."""
    def system(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros(t.shape + (2, 2), dtype=complex)
        out[..., 0, 1] = 1.0
        out[..., 1, 0] = lam * lam * profile.b.values(t) ** 2
        return out
    return system


def pd_zone_system(profile: CoefficientProfile, lam: float) -> Callable:
    """[[0, lambda], [lambda b^2, 0]] acting on (lambda u, D_t u)."""
    def system(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros(t.shape + (2, 2), dtype=complex)
        out[..., 0, 1] = lam
        out[..., 1, 0] = lam * profile.b.values(t) ** 2
        return out
    return system


# Matrizant

def _remainder_bound(J, terms):
    if J == 0:
        return 0.0
    return math.exp((terms + 1) * math.log(J) - math.lgamma(terms + 2) + J)


def matrizant_on_grid(grid: PanelGrid, samples, K: int = MATRIZANT_TERMS, tol: float = MATRIZANT_TOL):
    """
    Partial sums of the matrizant at every grid node via E_k = I + i int A E_{k-1}.

    Returns (E at nodes, J = int |A|, terms used, certified remainder bound).
    """
    samples = np.asarray(samples, dtype=complex)
    J = float(abs(grid.integral(np.linalg.norm(samples, 2, axis=(-2, -1)))))
    E = np.broadcast_to(IDENTITY, samples.shape).copy()
    for k in range(1, K + 1):
        E = IDENTITY + 1j * grid.cumulative(samples @ E)
        bound = _remainder_bound(J, k)
        if bound < tol:
            return E, J, k, bound
    raise MatrizantError(
        f"{K} terms leave a remainder bound {_remainder_bound(J, K):.3e} above {tol:.1e} (J={J:.3g})")


def _segment_edges(system, s, t, J, budget):
    count = max(1, math.ceil(J / budget))
    if count == 1:
        return np.array([s, t])
    sampling = PanelGrid(s, t, panels=4 * count, order=16)
    reach = np.abs(sampling.cumulative(np.linalg.norm(system(sampling.nodes), 2, axis=(-2, -1))))
    edges = np.interp(np.linspace(0.0, reach[-1], count + 1), reach, sampling.nodes)
    edges[0], edges[-1] = s, t
    return edges


def matrizant(system: Callable, s: float, t: float, lam: float = 0.0, K: int = MATRIZANT_TERMS,
              tol: float = MATRIZANT_TOL, max_step: Optional[float] = None,
              budget: float = SEGMENT_BUDGET) -> FundamentalSolution:
    """
    Fundamental solution of d/dt E = i A(t) E with a certified error bound.

    ``system(t_array)`` returns the matrices A at the given times. The interval is cut
    into segments carrying at most ``budget`` of int |A|; on each the series is summed
    until J^(K+1)/(K+1)! e^J < tol and the segment propagators are multiplied.
    """
    if s == t:
        return FundamentalSolution(IDENTITY.copy(), s, t, lam, 'matrizant')
    norm = lambda r: float(np.linalg.norm(system(np.array([r]))[0], 2))
    J, _ = integrate.quad(norm, min(s, t), max(s, t), limit=500, epsabs=1e-13, epsrel=1e-10)
    edges = _segment_edges(system, s, t, J, budget)
    total = IDENTITY.copy()
    log_growth = 0.0
    slack = 0.0
    terms = 0
    for a, b in zip(edges[:-1], edges[1:]):
        panels = 4 if max_step is None else max(4, math.ceil(abs(b - a) / max_step))
        grid = PanelGrid(a, b, panels)
        E, J_i, used, remainder = matrizant_on_grid(grid, system(grid.nodes), K, tol)
        total = E[-1] @ total
        log_growth += J_i
        slack += math.log1p(remainder * math.exp(-J_i))
        terms = max(terms, used)
    bound = math.exp(log_growth) * math.expm1(slack)
    logger.debug("matrizant over [%g, %g]: J=%.4g, %d segments, bound %.3e",
                 s, t, J, len(edges) - 1, bound)
    return FundamentalSolution(total, s, t, lam, 'matrizant', bound, terms)


# Diagonalization on the upper zone

@dataclass(frozen=True)
class DiagonalizationData:
    t: float
    lam: float
    D: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    N1: np.ndarray = field(repr=False)
    F0: np.ndarray = field(repr=False)
    R1: np.ndarray = field(repr=False)

    @property
    def M(self):
        return DIAGONALIZER

    @property
    def N1_offset(self):
        return float(np.linalg.norm(self.N1 - IDENTITY, 2))


def _diagonal_blocks(lam, b, b1, b2):
    """D, B, N1, F0 and R1 at arrays of coefficient values; trailing axes are 2x2."""
    shape = np.shape(b) + (2, 2)
    beta = -1j * b1 / b
    D = np.zeros(shape, dtype=complex)
    D[..., 0, 0], D[..., 1, 1] = lam * b, -lam * b
    B = np.empty(shape, dtype=complex)
    B[..., 0, 0] = B[..., 1, 1] = -0.5 * beta
    B[..., 0, 1] = B[..., 1, 0] = 0.5 * beta
    F0 = np.zeros(shape, dtype=complex)
    F0[..., 0, 0] = F0[..., 1, 1] = -0.5 * beta
    N = np.zeros(shape, dtype=complex)
    N[..., 0, 1] = beta / (4 * lam * b)
    N[..., 1, 0] = -beta / (4 * lam * b)
    DN = np.zeros(shape, dtype=complex)
    DN[..., 0, 1] = -(b2 / b ** 2 - 2 * b1 ** 2 / b ** 3) / (4 * lam)
    DN[..., 1, 0] = -DN[..., 0, 1]
    B1 = DN + B @ N - N @ F0
    N1 = IDENTITY + N
    R1 = np.linalg.solve(N1, B1)
    return D, B, N1, F0, R1


def _coefficient_jets(profile, t):
    return tuple(profile.b.derivatives(t, k) for k in (0, 1, 2))


def diagonalize(profile: CoefficientProfile, lam: float, t: float,
                params: Optional[ZoneParams] = None) -> DiagonalizationData:
    if params is not None and t * lam < params.scale * float(profile.nu(t)):
        raise ConfigurationError(f"(t={t!r}, lambda={lam!r}) lies below the separating line")
    b, b1, b2 = (float(v) for v in _coefficient_jets(profile, np.array(t)))
    D, B, N1, F0, R1 = _diagonal_blocks(lam, b, b1, b2)
    data = DiagonalizationData(t, lam, D, B, N1, F0, R1)
    if data.N1_offset >= 0.5:
        raise ComputationError(
            f"|N1 - I| = {data.N1_offset:.3g} >= 1/2 at t={t!r}, lambda={lam!r}; increase P")
    return data


def remainder_symbol(profile: CoefficientProfile, entry=(0, 1)):
    """R1 entry as a vectorized symbol a(t, lambda), for the symbol-class estimator."""
    def symbol(t, lam):
        t, lam = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(lam, dtype=float))
        b, b1, b2 = _coefficient_jets(profile, t)
        return _diagonal_blocks(lam, b, b1, b2)[4][(...,) + tuple(entry)]
    return symbol


# WKB propagator

@dataclass(frozen=True)
class WKBResult:
    fundamental: FundamentalSolution
    state: Optional[ModeState]
    phase: float
    amplitude: float
    remainder_growth: float


def wkb_propagate(profile: CoefficientProfile, lam: float, t_start: float, t_end: float,
                  init: Optional[ModeState] = None, params: Optional[ZoneParams] = None,
                  tol: float = MATRIZANT_TOL) -> WKBResult:
    """
    Propagator on the upper zone: E_V = M N1(t) E1(t, s) H(t, s) N1(s)^-1 M^-1 on
    (lambda b u, D_t u), returned in (u, D_t u) coordinates.
    """
    if lam > MAX_WKB_FREQUENCY:
        raise OutOfRangeError(f"lambda={lam!r} exceeds the phase-accuracy limit {MAX_WKB_FREQUENCY:g}")
    _check_interval(profile, t_start, t_end)
    if params is not None:
        for t in (t_start, t_end):
            if t * lam < params.scale * float(profile.nu(t)) * (1 - 1e-12):
                raise ConfigurationError(f"t={t!r} lies below the separating line for lambda={lam!r}")

    b_max = profile.b_max
    panels = max(4, math.ceil(abs(t_end - t_start) * lam * b_max))
    grid = PanelGrid(t_start, t_end, panels)
    b, b1, b2 = _coefficient_jets(profile, grid.nodes)

    theta = grid.cumulative(lam * b)
    theta_check, _ = integrate.quad(lambda r: lam * float(profile.b.values(np.array(r))),
                                    t_start, t_end, epsabs=1e-12 * lam * abs(t_end - t_start),
                                    epsrel=1e-13, limit=2000)
    if abs(theta_check - theta[-1]) > 1e-8 * max(1.0, abs(theta_check)):
        logger.warning("phase integral disagreement %.3e at lambda=%g", theta_check - theta[-1], lam)
    amplitude = 0.5 * np.log(b / b[0])
    drift = np.max(np.abs(grid.cumulative(0.5 * b1 / b) - amplitude))
    if drift > 1e-8:
        raise ComputationError(f"amplitude integral inconsistent with log(b) by {drift:.3e}")

    D, B, N1, F0, R1 = _diagonal_blocks(lam, b, b1, b2)
    rotated = np.array(R1)
    rotated[:, 0, 1] *= np.exp(-2j * theta)
    rotated[:, 1, 0] *= np.exp(2j * theta)
    H, growth, _, _ = matrizant_on_grid(grid, -rotated, tol=tol)

    E1 = np.exp(amplitude[-1]) * np.diag([np.exp(1j * theta[-1]), np.exp(-1j * theta[-1])])
    E_micro = DIAGONALIZER @ N1[-1] @ E1 @ H[-1] @ np.linalg.inv(N1[0]) @ DIAGONALIZER_INV
    E = rescale_propagators(E_micro, 1.0 / (lam * b[-1]), 1.0 / (lam * b[0]))
    fundamental = FundamentalSolution(E, t_start, t_end, lam, 'wkb')

    state = None
    if init is not None:
        u, Dtu = E @ np.array([init.u, -1j * init.ut])
        state = ModeState(t_end, complex(u), complex(1j * Dtu), lam)
    return WKBResult(fundamental, state, float(theta[-1]), float(amplitude[-1]), growth)


# Fundamental-solution norms across the zones

@dataclass(frozen=True)
class FundamentalNormReport:
    lam: float
    t_lambda: float
    nu_t_lambda: float
    observed_pd: float
    observed_pe: float
    observed_total: float
    pd_bound: float
    c1: float
    bound: Optional[float] = None
    times: np.ndarray = field(default=None, repr=False)
    norms: np.ndarray = field(default=None, repr=False)

    @property
    def observed(self):
        return max(self.observed_pd, self.observed_pe)

    @property
    def margin(self):
        if self.bound is None:
            return math.log(self.pd_bound) - math.log(self.observed_pd)
        return math.log(self.bound) - math.log(self.observed)

    def rows(self):
        bound = self.bound if self.bound is not None else self.pd_bound
        return [(t, n, bound) for t, n in zip(self.times, self.norms)]

    def as_dict(self):
        return {
            'lambda': self.lam, 't_lambda': self.t_lambda, 'nu_t_lambda': self.nu_t_lambda,
            'observed_pd': self.observed_pd, 'observed_pe': self.observed_pe,
            'observed_total': self.observed_total, 'pd_bound': self.pd_bound,
            'c1': self.c1, 'bound': self.bound, 'margin': self.margin,
        }


def estimate_fundamental_norm(profile: CoefficientProfile, lam: float, params: ZoneParams,
                              c1: Optional[float] = None, points: int = 48) -> FundamentalNormReport:
    """
    Observed |E| on (lambda u, D_t u) below the separating line and on (lambda b u, D_t u)
    above it, against exp(int |B|) and, when ``c1`` is given, exp(c1 nu(t_lambda)).
    """
    if lam <= params.M:
        raise ConfigurationError(f"lambda={lam!r} must exceed M={params.M!r}")
    tl = t_lambda(profile, lam, params.P)
    t0 = 1e-6 * min(tl, profile.T)
    nu_tl = float(profile.nu(tl))

    pd_times = np.geomspace(t0, tl, points)
    _, E_pd = integrate_propagator(profile, lam, t0, tl, t_eval=pd_times)
    E_pd = rescale_propagators(E_pd, lam, lam)
    norms_pd = np.linalg.norm(E_pd, 2, axis=(-2, -1))
    system = pd_zone_system(profile, lam)
    integral, _ = integrate.quad(lambda r: float(np.linalg.norm(system(r)[0], 2)), t0, tl, limit=500)

    if tl < profile.T:
        pe_times = np.geomspace(tl, profile.T, points)
        _, E_pe = integrate_propagator(profile, lam, tl, profile.T, t_eval=pe_times)
    else:
        pe_times, E_pe = np.array([tl]), IDENTITY[None].copy()
    b_pe = profile.b.values(pe_times)
    E_pe = rescale_propagators(E_pe, lam * b_pe, lam * b_pe[0])
    norms_pe = np.linalg.norm(E_pe, 2, axis=(-2, -1))
    total = E_pe[-1] @ np.diag([b_pe[0], 1.0]) @ E_pd[-1]

    observed = max(float(np.max(norms_pd)), float(np.max(norms_pe)))
    report = FundamentalNormReport(
        lam=float(lam), t_lambda=tl, nu_t_lambda=nu_tl,
        observed_pd=float(np.max(norms_pd)), observed_pe=float(np.max(norms_pe)),
        observed_total=float(np.linalg.norm(total, 2)),
        pd_bound=math.exp(integral),
        c1=max(0.0, math.log(observed) / nu_tl),
        bound=None if c1 is None else math.exp(c1 * nu_tl),
        times=np.concatenate([pd_times, pe_times]),
        norms=np.concatenate([norms_pd, norms_pe]),
    )
    logger.debug("fundamental norm at lambda=%g: %s", lam, report.as_dict())
    return report
