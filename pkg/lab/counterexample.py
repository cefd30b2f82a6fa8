"""
Optimality family: a mode equation whose coefficient oscillates on short intervals I_k
tuned to the separating line, so that the mode energy grows by exactly the factor the
loss weight allows.

Everything is built from the bump psi, the Floquet solution
w(t) = sin(t) exp(2 eps int_0^t psi sin^2) and the periodic coefficient a_eps with
w'' + a_eps w = 0.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
from scipy import integrate, linalg

from . import exprlang
from .coeffs import CoefficientProfile, ExprCoefficient, NuFunction, t_lambda
from .exceptions import (
    BlowupTrendError,
    ComputationError,
    ConfigurationError,
    FamilyConstructionError,
    IntegrationError,
    ResidualError,
)
from .exprlang import BinOp, Call, Neg, Num, Var
from .modesolve import ModeState, Trajectory
from .numerics import gauss_legendre, parallel_map
from .spectral import PERIODIC, MagneticOperator1D, eigen_modes

logger = logging.getLogger(__name__)

TWO_PI = 2 * math.pi
EDGE_CUTOFF = 1.0 / 600.0
CALIBRATION_AGREEMENT = 1e-10
ODE_RESIDUAL = 1e-8
MEMBER_AGREEMENT = 1e-6
LOG_CEILING = 700.0


def _bump_expr(r, kappa):
    """kappa * exp(-1 / (1 - ((tau - pi)/r)^2)) on the support."""
    u = BinOp('/', BinOp('-', Var('tau'), Num(math.pi)), Num(r))
    inner = BinOp('-', Num(1.0), BinOp('^', u, Num(2.0)))
    return BinOp('*', Num(kappa), Call('exp', Neg(BinOp('/', Num(1.0), inner))))


@dataclass(frozen=True)
class BumpPsi:
    """Smooth 2*pi-periodic bump centred at pi with half-width r; zero near 0 mod 2*pi."""
    r: float
    kappa: float

    def __post_init__(self):
        if self.kappa == 0:
            return
        if not 0 < self.r < math.pi:
            raise ConfigurationError(f"bump half-width must lie in (0, pi), got {self.r!r}")
        if not self.kappa > 0:
            raise ConfigurationError(f"bump amplitude must be positive, got {self.kappa!r}")

    @classmethod
    def zero(cls):
        return cls(0.0, 0.0)

    @property
    def is_zero(self):
        return self.kappa == 0

    @cached_property
    def expr(self):
        return _bump_expr(self.r, self.kappa)

    @cached_property
    def derivative_exprs(self):
        first = exprlang.differentiate(self.expr, 'tau')
        return (self.expr, first, exprlang.differentiate(first, 'tau'))

    @cached_property
    def _compiled(self):
        return tuple(exprlang.compile_scalar(e, 'tau') for e in self.derivative_exprs[:2])

    def scalar(self, tau):
        """(psi, psi') at one point."""
        if self.is_zero:
            return 0.0, 0.0
        tau = math.fmod(tau, TWO_PI)
        if tau < 0:
            tau += TWO_PI
        u = (tau - math.pi) / self.r
        if 1.0 - u * u <= EDGE_CUTOFF:
            return 0.0, 0.0
        value, slope = self._compiled
        return value(tau), slope(tau)

    def support_mask(self, tau_mod):
        if self.is_zero:
            return np.zeros(np.shape(tau_mod), dtype=bool)
        u = (tau_mod - math.pi) / self.r
        return 1.0 - u * u > EDGE_CUTOFF

    def derivative(self, tau, k=0):
        tau = np.asarray(tau, dtype=float)
        tau_mod = np.mod(tau, TWO_PI)
        out = np.zeros(tau.shape)
        mask = self.support_mask(tau_mod)
        if np.any(mask):
            out[mask] = exprlang.evaluate_array(self.derivative_exprs[k], 'tau', tau_mod[mask])
        return out

    def __call__(self, tau):
        return self.derivative(tau, 0)


def _bump_weight_integral(r):
    """int_0^{2 pi} bump * sin^2 with unit amplitude, by two independent rules."""
    unit = BumpPsi(r, 1.0)
    f = lambda tau: unit.scalar(tau)[0] * math.sin(tau) ** 2
    adaptive, _ = integrate.quad(f, math.pi - r, math.pi + r, epsabs=0.0, epsrel=1e-13, limit=400)
    nodes, weights = gauss_legendre(math.pi - r, math.pi + r, panels=32, order=32)
    fixed = float(np.sum(weights * unit(nodes) * np.sin(nodes) ** 2))
    if abs(adaptive - fixed) > CALIBRATION_AGREEMENT * abs(adaptive):
        raise ComputationError(f"bump integral rules disagree: {adaptive!r} vs {fixed!r}")
    return adaptive


def calibrate_psi(r: float = 2.0) -> BumpPsi:
    """Bump with int_0^{2 pi} psi sin^2 = pi."""
    if not 0 < r < math.pi:
        raise ConfigurationError(f"bump half-width must lie in (0, pi), got {r!r}")
    return BumpPsi(r, math.pi / _bump_weight_integral(r))


# The Floquet solution

def _weight_primitive(psi: BumpPsi, tau_mod):
    """G(x) = int_0^x psi sin^2 for x in [0, 2 pi), by cumulative adaptive quadrature."""
    x = np.asarray(tau_mod, dtype=float)
    if psi.is_zero:
        return np.zeros(x.shape)
    lo, hi = math.pi - psi.r, math.pi + psi.r
    clipped = np.clip(x, lo, hi).ravel()
    order = np.argsort(clipped)
    points = clipped[order]
    f = lambda tau: psi.scalar(tau)[0] * math.sin(tau) ** 2
    edges = np.concatenate([[lo], points])
    pieces = np.array([integrate.quad(f, a, b, epsabs=1e-15, epsrel=1e-13, limit=200)[0]
                       if b > a else 0.0 for a, b in zip(edges[:-1], edges[1:])])
    result = np.empty(points.shape)
    result[order] = np.cumsum(pieces)
    return result.reshape(x.shape)


def weight_integral(t, psi: BumpPsi):
    """Phi(t) = int_0^t psi sin^2, using the per-period value pi."""
    t = np.asarray(t, dtype=float)
    if psi.is_zero:
        return np.zeros(t.shape)
    periods = np.floor(t / TWO_PI)
    return math.pi * periods + _weight_primitive(psi, t - TWO_PI * periods)


def w_eps(t, epsilon: float, psi: BumpPsi):
    t = np.asarray(t, dtype=float)
    return np.sin(t) * np.exp(2 * epsilon * weight_integral(t, psi))


def w_eps_derivative(t, epsilon: float, psi: BumpPsi):
    t = np.asarray(t, dtype=float)
    g = psi(t) * np.sin(t) ** 2
    return np.exp(2 * epsilon * weight_integral(t, psi)) * (np.cos(t) + 2 * epsilon * g * np.sin(t))


def a_eps(t, epsilon: float, psi: BumpPsi):
    t = np.asarray(t, dtype=float)
    p, dp = psi.derivative(t, 0), psi.derivative(t, 1)
    s = np.sin(t)
    return (1 - 4 * epsilon * p * np.sin(2 * t) - 2 * epsilon * dp * s ** 2
            - 4 * epsilon ** 2 * p ** 2 * s ** 4)


def a_eps_scalar(t: float, epsilon: float, psi: BumpPsi) -> float:
    p, dp = psi.scalar(t)
    if p == 0.0 and dp == 0.0:
        return 1.0
    s = math.sin(t)
    return (1 - 4 * epsilon * p * math.sin(2 * t) - 2 * epsilon * dp * s * s
            - 4 * epsilon * epsilon * p * p * s ** 4)


def a_eps_expr(epsilon: float, psi: BumpPsi) -> exprlang.Expr:
    """a_eps on the support of psi as an expression in tau."""
    p, dp, _ = psi.derivative_exprs
    tau = Var('tau')
    sin = Call('sin', tau)
    sin2t = Call('sin', BinOp('*', Num(2.0), tau))
    terms = BinOp('*', BinOp('*', Num(4 * epsilon), p), sin2t)
    terms = BinOp('+', terms, BinOp('*', BinOp('*', Num(2 * epsilon), dp), BinOp('^', sin, Num(2.0))))
    terms = BinOp('+', terms, BinOp('*', BinOp('*', Num(4 * epsilon ** 2), BinOp('^', p, Num(2.0))),
                                    BinOp('^', sin, Num(4.0))))
    return BinOp('-', Num(1.0), terms)


def w_second_derivative(t, epsilon: float, psi: BumpPsi):
    """w'' from the product rule on sin(t) exp(2 eps Phi)."""
    t = np.asarray(t, dtype=float)
    s, c = np.sin(t), np.cos(t)
    p, dp = psi.derivative(t, 0), psi.derivative(t, 1)
    g = p * s ** 2
    dg = dp * s ** 2 + p * np.sin(2 * t)
    growth = np.exp(2 * epsilon * weight_integral(t, psi))
    return growth * (-s + 4 * epsilon * g * c + 2 * epsilon * dg * s + 4 * epsilon ** 2 * g ** 2 * s)


def verify_ode(epsilon: float, psi: BumpPsi, grid) -> float:
    """max |w'' + a_eps w| on the grid, required to stay below 1e-8 max |w|."""
    grid = np.asarray(grid, dtype=float)
    if np.any(grid < 0) or np.any(grid > 4 * math.pi):
        raise ConfigurationError("the residual grid must lie in [0, 4 pi]")
    w = w_eps(grid, epsilon, psi)
    residual = float(np.max(np.abs(w_second_derivative(grid, epsilon, psi) + a_eps(grid, epsilon, psi) * w)))
    if residual > ODE_RESIDUAL * max(1.0, float(np.max(np.abs(w)))):
        raise ResidualError(f"w'' + a w residual {residual:.3e} exceeds tolerance")
    return residual


def a_eps_bounds(epsilon: float, psi: BumpPsi, per_period: int = 100000) -> Tuple[float, float]:
    values = a_eps(np.linspace(0.0, TWO_PI, per_period, endpoint=False), epsilon, psi)
    return float(np.min(values)), float(np.max(values))


def integrate_w(epsilon: float, psi: BumpPsi, s0: float, s1: float, init=(0.0, 1.0),
                t_eval=None, rtol: float = 1e-12, atol: float = 1e-14):
    """Solve w'' + a_eps w = 0 from (w, w') = init at s0."""
    def rhs(s, y):
        return np.array([y[1], -a_eps_scalar(s, epsilon, psi) * y[0]])

    solution = integrate.solve_ivp(rhs, (s0, s1), np.asarray(init, dtype=float), method='DOP853',
                                   t_eval=t_eval, rtol=rtol, atol=atol, first_step=0.01)
    if not solution.success:
        raise IntegrationError(solution.message, t=float(solution.t[-1]) if solution.t.size else s0)
    return solution


def monodromy(epsilon: float, psi: BumpPsi) -> np.ndarray:
    """One-period propagator of (w, w') for w'' + a_eps w = 0."""
    columns = [integrate_w(epsilon, psi, 0.0, TWO_PI, init, rtol=1e-13, atol=1e-15).y[:, -1]
               for init in ((1.0, 0.0), (0.0, 1.0))]
    return np.column_stack(columns)


def floquet_multipliers(epsilon: float, psi: BumpPsi) -> np.ndarray:
    """Eigenvalues of the monodromy matrix, largest modulus first."""
    multipliers = linalg.eigvals(monodromy(epsilon, psi))
    return multipliers[np.argsort(-np.abs(multipliers))]


# The family

@dataclass(frozen=True)
class FamilyCoefficient:
    """b_k with b_k^2(t) = a_eps(lambda_k (t - t_k)) on I_k and 1 elsewhere."""
    lam: int
    t_k: float
    half_width_s: float
    epsilon: float
    psi: BumpPsi = field(repr=False)

    @cached_property
    def _a_exprs(self):
        first = exprlang.differentiate(a_eps_expr(self.epsilon, self.psi), 'tau')
        return (first, exprlang.differentiate(first, 'tau'))

    def _local(self, t):
        s = self.lam * (np.asarray(t, dtype=float) - self.t_k)
        inside = np.abs(s) <= self.half_width_s
        return s, inside

    def _square_and_derivatives(self, t):
        t = np.asarray(t, dtype=float)
        s, inside = self._local(t)
        q = np.ones(t.shape)
        dq = np.zeros(t.shape)
        d2q = np.zeros(t.shape)
        if np.any(inside):
            s_in = s[inside]
            q[inside] = a_eps(s_in, self.epsilon, self.psi)
            s_mod = np.mod(s_in, TWO_PI)
            support = self.psi.support_mask(s_mod)
            first = np.zeros(s_in.shape)
            second = np.zeros(s_in.shape)
            if np.any(support):
                first[support] = exprlang.evaluate_array(self._a_exprs[0], 'tau', s_mod[support])
                second[support] = exprlang.evaluate_array(self._a_exprs[1], 'tau', s_mod[support])
            dq[inside] = self.lam * first
            d2q[inside] = self.lam ** 2 * second
        return q, dq, d2q

    def values(self, t):
        return np.sqrt(self._square_and_derivatives(t)[0])

    def derivatives(self, t, k):
        q, dq, d2q = self._square_and_derivatives(t)
        root = np.sqrt(q)
        if k == 0:
            return root
        if k == 1:
            return dq / (2 * root)
        return d2q / (2 * root) - dq ** 2 / (4 * q * root)

    def square(self, t):
        s = self.lam * (t - self.t_k)
        if abs(s) > self.half_width_s:
            return 1.0
        return a_eps_scalar(s, self.epsilon, self.psi)

    def sample_points(self, T):
        steps = int(round(2 * self.half_width_s / (TWO_PI / 32)))
        s = np.linspace(-self.half_width_s, self.half_width_s, steps + 1)
        t = self.t_k + s / self.lam
        return t[(t > 0) & (t <= T)]


@dataclass(frozen=True)
class FamilyLevel:
    k: int
    level: int
    lam: int
    t_k: float
    rho: float
    multiple: int

    @property
    def left(self):
        return self.t_k - self.rho / 2

    @property
    def right(self):
        return self.t_k + self.rho / 2

    @property
    def growth_exponent_factor(self):
        """rho_k lambda_k = 4 pi multiple, exactly."""
        return 4 * math.pi * self.multiple


@dataclass(frozen=True)
class CounterexampleFamily:
    epsilon: float
    P: int
    p: int
    nu: NuFunction
    a0: int
    c1: float
    psi: BumpPsi = field(repr=False)
    levels: Tuple[FamilyLevel, ...]
    a_bounds: Tuple[float, float]

    @property
    def T(self):
        return self.nu.T

    def level(self, k) -> FamilyLevel:
        for level in self.levels:
            if level.k == k:
                return level
        raise ConfigurationError(f"family has no member k={k}")

    def coefficient(self, k) -> FamilyCoefficient:
        level = self.level(k)
        return FamilyCoefficient(level.lam, level.t_k, 2 * math.pi * level.multiple, self.epsilon, self.psi)

    def profile(self, k) -> CoefficientProfile:
        return CoefficientProfile(self.coefficient(k), self.nu)

    @cached_property
    def monodromy_matrix(self):
        return monodromy(self.epsilon, self.psi)

    def growth_log(self, k):
        """eps rho_k lambda_k = eps 2^p pi floor(nu(t_k))."""
        return self.epsilon * self.level(k).growth_exponent_factor

    def manifest(self):
        return {
            'epsilon': self.epsilon, 'P': self.P, 'p': self.p, 'T': self.T, 'a0': self.a0,
            'c1': self.c1, 'psi': {'r': self.psi.r, 'kappa': self.psi.kappa},
            'a_eps_bounds': list(self.a_bounds),
            'members': [
                {'k': lv.k, 'level': lv.level, 'lambda': lv.lam, 't_k': lv.t_k, 'rho': lv.rho,
                 'interval': [lv.left, lv.right], 'lambda_rho_over_4pi': lv.multiple,
                 'separating_line_residual': self.separating_residual(lv)}
                for lv in self.levels
            ],
        }

    def separating_residual(self, level):
        return abs(2.0 ** self.P * float(self.nu(level.t_k)) / level.t_k - level.lam) / level.lam


def build_family(epsilon: float, P: int, p: int, nu: NuFunction, a0: int = 1, k_count: int = 8,
                 c1: float = 1.0, psi: Optional[BumpPsi] = None) -> CounterexampleFamily:
    """
    Choose, level by level n = floor(nu), the smallest lattice frequency with
    2^P nu(t_k)/t_k = lambda_k and floor(nu(t_k)) = n, then the interval I_k of length
    rho_k = 2^(p-P) pi t_k floor(nu(t_k)) / nu(t_k) around t_k.
    """
    if not nu.diverges_at_zero:
        raise ConfigurationError("the family needs nu(t) -> infinity as t -> 0")
    if p < 2:
        raise ConfigurationError(f"p must be at least 2, got {p!r}")
    if not 2 ** (p - 1) * epsilon * math.pi > c1 + 1:
        raise ConfigurationError(
            f"2^(p-1) eps pi = {2 ** (p - 1) * epsilon * math.pi:.4g} must exceed c1 + 1 = {c1 + 1:.4g}")
    psi = psi or calibrate_psi()
    a_min, a_max = a_eps_bounds(epsilon, psi)
    if a_min <= 0:
        raise FamilyConstructionError(f"a_eps is not positive (min {a_min!r}); reduce epsilon")

    operator = MagneticOperator1D(TWO_PI, exprlang.Num(a0) if a0 >= 0 else exprlang.Neg(exprlang.Num(-a0)),
                                  PERIODIC)
    lattice_step = eigen_modes(operator, 1)[0].lam
    base = CoefficientProfile(ExprCoefficient(exprlang.Num(1.0)), nu)
    scale = 2.0 ** P
    levels = []
    n = max(1, math.ceil(nu.floor_constant))
    attempts = 0
    while len(levels) < k_count:
        attempts += 1
        if attempts > 4 * k_count + 64:
            raise FamilyConstructionError(f"only {len(levels)} of {k_count} members fit in (0, T]")
        t_star = nu.inverse(float(n))
        lam = int(round(lattice_step * math.ceil(scale * n / (t_star * lattice_step))))
        t_k = t_lambda(base, lam, P)
        nu_k = float(nu(t_k))
        floor_nu = math.floor(nu_k)
        if floor_nu != n:
            logger.debug("level %d skipped: floor(nu(t_k)) = %d", n, floor_nu)
            n += 1
            continue
        multiple = 2 ** (p - 2) * floor_nu
        rho = 2.0 ** (p - P) * math.pi * t_k * floor_nu / nu_k
        level = FamilyLevel(len(levels) + 1, n, lam, t_k, rho, multiple)
        if abs(lam * rho / (4 * math.pi) - multiple) > 1e-8 * multiple:
            raise FamilyConstructionError(f"lambda rho / 4pi = {lam * rho / (4 * math.pi)!r} is not {multiple}")
        inside = level.left > 0 and level.right <= nu.T
        disjoint = not levels or level.right < levels[-1].left
        if inside and disjoint:
            levels.append(level)
        else:
            logger.debug("level %d skipped: interval [%g, %g] does not fit", n, level.left, level.right)
        n += 1
    family = CounterexampleFamily(epsilon, P, p, nu, a0, c1, psi, tuple(levels), (a_min, a_max))
    logger.info("built family with %d members, lambda from %d to %d",
                len(levels), levels[0].lam, levels[-1].lam)
    return family


@dataclass(frozen=True)
class FamilyMember:
    k: int
    lam: int
    t_k: float
    rho: float
    T: float
    closed: Tuple[ModeState, ModeState, ModeState]
    numeric: Tuple[ModeState, ModeState, ModeState]
    mismatch: float
    trajectory: Trajectory = field(repr=False)

    @property
    def numeric_left(self):
        return self.numeric[0]

    @property
    def numeric_right(self):
        return self.numeric[2]


def _closed_state(family, level, s):
    w = float(w_eps(s, family.epsilon, family.psi))
    dw = float(w_eps_derivative(s, family.epsilon, family.psi))
    return ModeState(level.t_k + s / level.lam, w / level.lam, dw, level.lam)


def _mismatch(closed, numeric):
    worst = 0.0
    for c, n in zip(closed, numeric):
        reference = abs(c.ut)
        worst = max(worst, abs(n.ut - c.ut) / reference, c.lam * abs(n.u - c.u) / reference)
    return worst


def solve_family_member(family: CounterexampleFamily, k: int) -> FamilyMember:
    """
    u = lambda^-1 w(lambda (t - t_k)) on I_k, with data (0, 1) at t_k.

    The numeric solution starts from the closed-form data at the left end of I_k and is
    carried period by period with the monodromy matrix of w'' + a_eps w = 0; the ends of
    I_k and t_k are whole periods apart in the fast variable.
    """
    level = family.level(k)
    S = 2 * math.pi * level.multiple
    closed = tuple(_closed_state(family, level, s) for s in (-S, 0.0, S))

    M = family.monodromy_matrix
    periods = 2 * level.multiple
    states = np.empty((periods + 1, 2))
    states[0] = (closed[0].u * level.lam, closed[0].ut)
    for j in range(periods):
        states[j + 1] = M @ states[j]
    s_grid = -S + TWO_PI * np.arange(periods + 1)
    times = level.t_k + s_grid / level.lam
    u, ut = states[:, 0] / level.lam, states[:, 1]
    numeric = tuple(ModeState(float(times[i]), float(u[i]), float(ut[i]), level.lam)
                    for i in (0, level.multiple, periods))

    mismatch = _mismatch(closed, numeric)
    if mismatch > MEMBER_AGREEMENT:
        raise ResidualError(f"member k={k}: numeric and closed form differ by {mismatch:.3e}")
    logger.debug("member k=%d solved over %d periods, mismatch %.3e", k, periods, mismatch)
    trajectory = Trajectory(level.lam, times, u.astype(complex), ut.astype(complex))
    return FamilyMember(k, level.lam, level.t_k, level.rho, family.T, closed, numeric, mismatch, trajectory)


@dataclass(frozen=True)
class BlowupRow:
    k: int
    lam: int
    t_k: float
    rho: float
    nu_t_k: float
    log_E0: float
    log_ET: float
    log_weighted: float

    @property
    def E0(self):
        return math.exp(self.log_E0)

    @property
    def ET(self):
        return math.exp(self.log_ET)

    @property
    def weighted(self):
        return math.exp(self.log_weighted)

    def row(self):
        return (self.k, self.lam, self.t_k, self.rho, self.E0, self.ET, self.weighted, self.log_weighted)


def demonstrate_blowup(family: CounterexampleFamily, s: float = 1.0, c1: Optional[float] = None,
                       threshold: Optional[float] = None) -> Tuple[BlowupRow, ...]:
    """
    Energies of the members at 0 and T, and the energy at T weighted by exp(-2 c1 nu(t_k)).
    The weighted values must increase strictly with k.
    """
    c1 = family.c1 if c1 is None else c1
    rows = []
    for level in family.levels:
        growth = family.growth_log(level.k)
        nu_k = float(family.nu(level.t_k))
        sobolev = 2 * (s - 1) * math.log(level.lam)
        row = BlowupRow(level.k, level.lam, level.t_k, level.rho, nu_k,
                        sobolev - growth, sobolev + growth, sobolev + growth - 2 * c1 * nu_k)
        if max(abs(row.log_E0), abs(row.log_ET), abs(row.log_weighted)) > LOG_CEILING:
            raise FamilyConstructionError(f"member k={level.k} energies leave the floating-point range")
        floor_bound = sobolev + 2 * (nu_k - 1) * (c1 + 1) - 2 * c1 * nu_k
        if row.log_weighted < floor_bound:
            raise BlowupTrendError(f"member k={level.k}: weighted log energy below {floor_bound:.6g}")
        rows.append(row)
    logs = np.array([row.log_weighted for row in rows])
    if np.any(np.diff(logs) <= 0):
        raise BlowupTrendError("weighted energies do not increase with k; check p and epsilon")
    if threshold is not None and rows[-1].weighted <= threshold:
        raise BlowupTrendError(f"weighted energy never exceeds {threshold!r} within {len(rows)} members")
    return tuple(rows)


def solve_family(family: CounterexampleFamily):
    return parallel_map(lambda level: solve_family_member(family, level.k), family.levels)
