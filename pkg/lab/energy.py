"""Homogeneous Sobolev energies, the conservation law for b = 1, and the combined estimate."""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from . import exprlang
from .coeffs import CONSTANT, CoefficientProfile, ExprCoefficient, NuFunction, t_lambda
from .exceptions import ConfigurationError
from .modesolve import ModeState, integrate_mode
from .numerics import parallel_map
from .spectral import ModeCoefficients
from .zones import ZoneKind, ZoneParams, classify, micro_energy_norms, refine_geometric

logger = logging.getLogger(__name__)

CONSERVATION_TOLERANCE = 1e-8
STABILITY_TOLERANCE = 0.10
START_FRACTION = 1e-6


def mode_energy(lam, u, ut, s):
    """lambda^(2s) |u|^2 + lambda^(2(s-1)) |u_t|^2, elementwise."""
    lam = np.asarray(lam, dtype=float)
    return lam ** (2 * s) * np.abs(u) ** 2 + lam ** (2 * (s - 1)) * np.abs(ut) ** 2


def sobolev_energy(coeffs_u: ModeCoefficients, coeffs_ut: ModeCoefficients, s: float) -> float:
    if (coeffs_u.lambdas, coeffs_u.indices) != (coeffs_ut.lambdas, coeffs_ut.indices):
        raise ConfigurationError("energy needs u and u_t coefficients on the same modes")
    if not len(coeffs_u):
        return 0.0
    return float(np.sum(mode_energy(coeffs_u.lambda_array(), coeffs_u.value_array(),
                                     coeffs_ut.value_array(), s)))


def unit_profile(T: float) -> CoefficientProfile:
    """b = 1 with constant nu on (0, T]."""
    return CoefficientProfile(ExprCoefficient(exprlang.Num(1.0)), NuFunction(CONSTANT, T))


@dataclass(frozen=True)
class ConservationReport:
    lam: float
    s: float
    drift: float
    threshold: float

    @property
    def passed(self):
        return self.drift <= self.threshold


def conservation_check(lam: float, t0: float, t1: float, s: float,
                       points: int = 100, threshold: float = CONSERVATION_TOLERANCE) -> ConservationReport:
    """Relative drift of the mode energy for b = 1 from data (0, 1) at t0."""
    profile = unit_profile(max(t0, t1))
    times = np.linspace(t0, t1, points)
    trajectory = integrate_mode(profile, lam, t0, t1, ModeState(t0, 0.0, 1.0, lam), t_eval=times)
    energies = mode_energy(lam, trajectory.u, trajectory.ut, s)
    drift = float(np.max(np.abs(energies - energies[0])) / energies[0])
    logger.debug("conservation at lambda=%g, s=%g: drift %.3e", lam, s, drift)
    return ConservationReport(float(lam), float(s), drift, threshold)


@dataclass(frozen=True)
class EnergyRow:
    lam: float
    sup_V: float
    rhs: float
    nu_t_lambda: Optional[float]

    @property
    def ratio(self):
        return self.sup_V / self.rhs

    @property
    def c1(self):
        if self.nu_t_lambda is None:
            return None
        return math.log(self.ratio) / self.nu_t_lambda


@dataclass(frozen=True)
class EnergyReport:
    rows: Tuple[EnergyRow, ...]
    c1: float
    c1_refined: float
    P: int

    @property
    def stable(self):
        return self.c1_refined <= (1 + STABILITY_TOLERANCE) * self.c1 + 1e-6

    @property
    def passed(self):
        return all(math.isfinite(row.ratio) for row in self.rows) and self.stable

    def table(self):
        return [(r.lam, r.sup_V, r.rhs, r.ratio, r.nu_t_lambda if r.nu_t_lambda is not None else '')
                for r in self.rows]

    def as_dict(self):
        return {
            'P': self.P,
            'c1': self.c1,
            'c1_refined': self.c1_refined,
            'stable': self.stable,
            'passed': self.passed,
            'rows': [
                {'lambda': r.lam, 'sup_V': r.sup_V, 'rhs': r.rhs, 'ratio': r.ratio,
                 'nu_t_lambda': r.nu_t_lambda}
                for r in self.rows
            ],
        }


def _initial_data(lam, init):
    if init is not None and lam in init:
        u0, u1 = init[lam]
        return complex(u0), complex(u1)
    return 1.0 / lam, 1.0


def _mode_row(profile, params, lam, init) -> EnergyRow:
    u0, u1 = _initial_data(lam, init)
    above_cut = lam > params.M
    tl = t_lambda(profile, lam, params.P) if above_cut else profile.T
    start = START_FRACTION * min(tl, profile.T)
    trajectory = integrate_mode(profile, lam, start, profile.T, ModeState(start, u0, u1, lam))
    b = profile.b.values(trajectory.t)
    zones = np.array([classify(t, lam, params, profile.nu) for t in trajectory.t])
    sup_V = 0.0
    for zone in ZoneKind:
        mask = zones == zone
        if np.any(mask):
            norms = micro_energy_norms(lam, trajectory.u[mask], trajectory.ut[mask], zone, b[mask])
            sup_V = max(sup_V, float(np.max(norms)))
    rhs = lam * abs(u0) + abs(u1)
    nu_tl = float(profile.nu(tl)) if above_cut else None
    logger.debug("lambda=%g: sup|V|=%.6g rhs=%.6g", lam, sup_V, rhs)
    return EnergyRow(float(lam), sup_V, rhs, nu_tl)


def _fitted_c1(rows):
    values = [row.c1 for row in rows if row.c1 is not None]
    return max([0.0] + values)


def verify_estimate(profile: CoefficientProfile, params: ZoneParams, lambdas: Sequence[float],
                    init: Optional[Dict[float, Tuple[complex, complex]]] = None) -> EnergyReport:
    """
    Evolve every mode across the zones, record sup_t |V| against lambda|u0| + |u1| and fit
    c1 = sup log(ratio)/nu(t_lambda) over the rows above the frequency cut. The fit is
    repeated on the geometrically refined lambda grid to judge stability.
    """
    lambdas = np.sort(np.asarray(lambdas, dtype=float))
    rows = parallel_map(lambda lam: _mode_row(profile, params, lam, init), lambdas)
    extra = np.setdiff1d(refine_geometric(lambdas), lambdas)
    extra_rows = parallel_map(lambda lam: _mode_row(profile, params, lam, init), extra)
    report = EnergyReport(tuple(rows), _fitted_c1(rows), _fitted_c1(list(rows) + list(extra_rows)),
                          params.P)
    logger.info("estimate verification: c1=%.6g refined=%.6g stable=%s",
                report.c1, report.c1_refined, report.stable)
    return report


@dataclass(frozen=True)
class EnergyHistory:
    k: int
    energies: Dict[str, float]
    drift_before: float
    drift_after: float

    @property
    def conserved(self):
        return max(self.drift_before, self.drift_after) <= CONSERVATION_TOLERANCE


def family_energy_history(member, periods: int = 20) -> EnergyHistory:
    """
    Energy of one family member at 0, at both ends of its interval and at T. Outside the
    interval b = 1, so the energy is checked for conservation on windows of ``periods``
    periods adjacent to each end and carried to 0 and T.
    """
    lam = member.lam
    profile = unit_profile(member.T)
    window = periods * 2 * math.pi / lam
    left, right = member.numeric_left, member.numeric_right
    E_left = float(mode_energy(lam, left.u, left.ut, 1.0))
    E_right = float(mode_energy(lam, right.u, right.ut, 1.0))
    return EnergyHistory(
        member.k,
        {'0': E_left, 'left': E_left, 'right': E_right, 'T': E_right},
        _window_drift(profile, left, max(0.0, left.t - window), E_left),
        _window_drift(profile, right, min(member.T, right.t + window), E_right),
    )


def _window_drift(profile, state, t_end, energy):
    """Relative energy drift from ``state`` to ``t_end``; the state is normalized first."""
    scale = math.sqrt(energy)
    lam = state.lam
    start = ModeState(state.t, state.u / scale, state.ut / scale, lam)
    times = np.linspace(state.t, t_end, 50)
    trajectory = integrate_mode(profile, lam, state.t, t_end, start, t_eval=times)
    energies = mode_energy(lam, trajectory.u, trajectory.ut, 1.0)
    return float(np.max(np.abs(energies - 1.0)))
