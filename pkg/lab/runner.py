"""
Command orchestration: validate a run config, execute one laboratory command and emit
its tables and documents. Used by the ``nuloss`` management command and the REST views.
"""
import copy
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List

import numpy as np
from django.conf import settings

from . import exprlang
from .coeffs import classify_loss, loss_exponent, t_lambda, verify_assumptions
from .counterexample import (
    build_family,
    calibrate_psi,
    demonstrate_blowup,
    floquet_multipliers,
    solve_family,
    verify_ode,
)
from .energy import family_energy_history, mode_energy, verify_estimate
from .exceptions import ConfigurationError, LabError, OutOfRangeError, ResidualError, ZoneBoundaryError
from .modesolve import (
    ModeState,
    estimate_fundamental_norm,
    integrate_mode,
    integrator_fundamental,
    remainder_symbol,
    wkb_propagate,
)
from .numerics import geometric_grid, parallel_map
from .reporting import Emitter, config_hash
from .serializers import COMMANDS, FITTED, RunConfigSerializer
from .spectral import (
    DIRICHLET,
    QuadratureGrid,
    eigen_modes,
    fd_spectrum,
    forward_transform,
    inverse_transform,
    poincare_constant,
    sobolev_norm,
)
from .zones import ZoneKind, integral_bound_check, stencil_steps, symbol_class_estimate, zone_map

logger = logging.getLogger(__name__)

FD_POINTS = 2000
SOLVE_START_FRACTION = 1e-6
ODE_GRID_POINTS = 2001
SAMPLE_POINTS = 401
MEMBER_ENERGY_AGREEMENT = 1e-5


@dataclass
class RunResult:
    command: str
    exit_code: int
    summary: dict
    files: List[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    config_hash: str = ''


# Configuration

def load_config(path) -> dict:
    try:
        with open(path, encoding='utf-8') as handle:
            return json.load(handle)
    except FileNotFoundError:
        raise ConfigurationError(f"config file {path!s} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path!s} is not valid JSON: {exc}") from None


def _decode(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def apply_overrides(config: dict, overrides: Iterable[str]) -> dict:
    """Apply ``section.key=value`` overrides; values are read as JSON when they parse."""
    if not isinstance(config, dict):
        raise ConfigurationError("a run config must be a JSON object")
    result = copy.deepcopy(config)
    for item in overrides:
        path, sep, value = item.lstrip('-').partition('=')
        if not sep or not path:
            raise ConfigurationError(f"override {item!r} must look like section.key=value")
        keys = path.split('.')
        node = result
        for key in keys[:-1]:
            child = node.setdefault(key, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"override {item!r}: {key!r} is not a section")
            node = child
        node[keys[-1]] = _decode(value)
    return result


def _flatten(errors, prefix=''):
    if isinstance(errors, dict):
        for key, value in errors.items():
            yield from _flatten(value, f"{prefix}{key}." if key != 'non_field_errors' else prefix)
    elif isinstance(errors, list):
        for value in errors:
            yield from _flatten(value, prefix)
    else:
        yield f"{prefix.rstrip('.') or 'config'}: {errors}"


def validate_config(raw: dict) -> dict:
    serializer = RunConfigSerializer(data=raw)
    if not serializer.is_valid():
        raise ConfigurationError('invalid config; ' + '; '.join(_flatten(serializer.errors)))
    return serializer.validated_data


def lambda_sweep(sweep: dict) -> np.ndarray:
    octaves = math.log2(sweep['lambda_max'] / sweep['lambda_min'])
    count = max(1, round(octaves * sweep['per_octave'])) + 1
    if sweep['lambda_max'] == sweep['lambda_min']:
        count = 1
    return np.geomspace(sweep['lambda_min'], sweep['lambda_max'], count)


def _above_cut(cfg, lambdas):
    params = cfg['zones']['params']
    kept = lambdas[lambdas > params.M]
    if not kept.size:
        raise ConfigurationError(f"no sweep frequency exceeds M={params.M!r}")
    return kept


def _loss_constant(cfg):
    """counterexample.c1, fitted from the estimate verification of the run profile when asked."""
    c1 = cfg['counterexample']['c1']
    if c1 != FITTED:
        return c1
    lambdas = _above_cut(cfg, lambda_sweep(cfg['sweep']))
    report = verify_estimate(cfg['coefficient']['profile'], cfg['zones']['params'], lambdas)
    logger.info("fitted c1=%.6g over %d frequencies", report.c1, lambdas.size)
    return report.c1


# Commands

def _sample_spectrum(cfg, modes, emitter):
    """Coefficients of domain.sample, x(L - x) unless set, and how well they rebuild it."""
    length = cfg['domain']['operator'].length
    sample = cfg['domain']['sample']
    if sample is None:
        sample = exprlang.BinOp('*', exprlang.Var('x'), exprlang.BinOp('-', exprlang.Num(length), exprlang.Var('x')))
    grid = QuadratureGrid.for_modes(modes)
    coeffs = forward_transform(exprlang.evaluate_array(sample, 'x', grid.nodes), modes, grid)
    emitter.table('coefficients', ['lambda', 're', 'im'], coeffs.rows())
    x = np.linspace(0.0, length, SAMPLE_POINTS)
    error = np.abs(inverse_transform(coeffs, modes, x) - exprlang.evaluate_array(sample, 'x', x))
    return {
        'source': exprlang.to_source(sample),
        'l2_norm': sobolev_norm(coeffs, 0.0),
        'h1_norm': sobolev_norm(coeffs, 1.0),
        'max_reconstruction_error': float(np.max(error)),
    }


def _eigen(cfg, emitter):
    op = cfg['domain']['operator']
    modes = eigen_modes(op, cfg['domain']['modes'])
    columns = ['eigenvalue', 'lambda', 'index']
    rows = [[m.eigenvalue, m.lam, m.index] for m in modes]
    summary = {'modes': len(modes), 'poincare_constant': poincare_constant(op)}
    if op.boundary == DIRICHLET:
        fd = fd_spectrum(op, FD_POINTS, len(modes)) ** 2
        columns.append('fd_eigenvalue')
        for row, value in zip(rows, fd):
            row.append(float(value))
        summary['fd_max_relative_error'] = float(np.max(np.abs(fd - [m.eigenvalue for m in modes])
                                                        / [m.eigenvalue for m in modes]))
    emitter.table('eigen', columns, rows)
    summary['sample'] = _sample_spectrum(cfg, modes, emitter)
    return 0, summary


def _zones(cfg, emitter):
    profile, params = cfg['coefficient']['profile'], cfg['zones']['params']
    ts = geometric_grid(profile.T, cfg['sweep']['t_points'] - 1)
    lambdas = lambda_sweep(cfg['sweep'])
    rows = zone_map(profile, params, ts, lambdas)
    emitter.table('zones', ['t', 'lambda', 'zone'], rows)

    line = []
    for lam in lambdas[lambdas > params.M]:
        try:
            tl = t_lambda(profile, lam, params.P)
        except OutOfRangeError as exc:
            logger.warning("%s", exc)
            continue
        line.append((float(lam), tl, float(profile.nu(tl))))
    emitter.table('separating_line', ['lambda', 't_lambda', 'nu_t_lambda'], line)
    counts = {zone.value: sum(1 for row in rows if row[2] == zone.value) for zone in ZoneKind}
    return 0, {'points': len(rows), 'zones': counts, 'separating_line_rows': len(line)}


def _solve_one(cfg, lam, times):
    profile, solver = cfg['coefficient']['profile'], cfg['solver']
    start = times[0]
    trajectory = integrate_mode(profile, lam, start, profile.T,
                                ModeState(start, solver['u0'], solver['u1'], lam),
                                t_eval=times, rtol=solver['rel_tol'], atol=solver['abs_tol'])
    return trajectory


def _wkb_check(cfg, lam):
    """Relative difference of the integrator and WKB propagators above the separating line."""
    profile, params = cfg['coefficient']['profile'], cfg['zones']['params']
    try:
        tl = t_lambda(profile, lam, params.P)
    except OutOfRangeError:
        return None
    if lam <= params.M or tl >= profile.T:
        return None
    reference = integrator_fundamental(profile, lam, tl, profile.T, rtol=1e-12, atol=1e-14).matrix
    approx = wkb_propagate(profile, lam, tl, profile.T, params=params).fundamental.matrix
    return float(np.linalg.norm(approx - reference, 2) / np.linalg.norm(reference, 2))


def _solve(cfg, emitter):
    profile = cfg['coefficient']['profile']
    lambdas = lambda_sweep(cfg['sweep'])
    start = SOLVE_START_FRACTION * profile.T
    times = np.geomspace(start, profile.T, cfg['sweep']['t_points'])
    trajectories = parallel_map(lambda lam: _solve_one(cfg, lam, times), lambdas)
    rows = []
    finals = []
    for lam, trajectory in zip(lambdas, trajectories):
        energies = mode_energy(lam, trajectory.u, trajectory.ut, 1.0)
        for t, u, ut, energy in zip(trajectory.t, trajectory.u, trajectory.ut, energies):
            rows.append((float(lam), t, u.real, u.imag, ut.real, ut.imag, energy))
        end = trajectory.final
        finals.append({'lambda': float(lam), 'u': [end.u.real, end.u.imag], 'ut': [end.ut.real, end.ut.imag],
                       'wkb_relative_error': _wkb_check(cfg, lam)})
    emitter.table('solve', ['lambda', 't', 're_u', 'im_u', 're_ut', 'im_ut', 'energy'], rows)
    return 0, {'lambdas': len(lambdas), 'final': finals}


def _verify(cfg, emitter):
    profile, params = cfg['coefficient']['profile'], cfg['zones']['params']
    lambdas = _above_cut(cfg, lambda_sweep(cfg['sweep']))
    assumptions = verify_assumptions(profile)
    report = verify_estimate(profile, params, lambdas)
    norms = parallel_map(lambda lam: estimate_fundamental_norm(profile, lam, params, c1=report.c1), lambdas)
    emitter.table('energy', ['lambda', 'sup_V', 'rhs', 'ratio', 'nu_t_lambda'], report.table())
    emitter.table('fundamental', ['lambda', 't_lambda', 'observed', 'bound', 'margin'],
                  [(n.lam, n.t_lambda, n.observed, n.bound, n.margin) for n in norms])
    emitter.table('propagator_norm', ['lambda', 't', 'norm', 'bound'],
                  [(n.lam, *row) for n in norms for row in n.rows()])

    document = {
        'assumptions': assumptions.as_dict(),
        'estimate': report.as_dict(),
        'fundamental': [n.as_dict() for n in norms],
    }
    passed = assumptions.passed and report.passed
    symbol = _remainder_class(cfg, lambdas)
    if symbol is not None:
        document['remainder_class'] = symbol.as_dict()
        passed = passed and symbol.passed
    bound = _remainder_integral(cfg, lambdas)
    if bound is not None:
        document['remainder_integral'] = bound
    document['passed'] = passed
    emitter.document('verify', document)
    summary = {'passed': passed, 'c1': report.c1, 'c1_refined': report.c1_refined,
               'assumptions_passed': assumptions.passed}
    return (0 if passed else 2), summary


def _upper_zone_times(cfg, lambdas, points=8):
    profile, params = cfg['coefficient']['profile'], cfg['zones']['params']
    try:
        shifted = float(lambdas[0]) - float(stencil_steps(0.0, float(lambdas[0]), order=3)[1])
        lowest = t_lambda(profile, shifted, params.P)
    except OutOfRangeError:
        return None
    top = profile.T * (1 - 1e-3)
    if lowest * 1.01 >= top:
        return None
    return np.geomspace(lowest * 1.01, top, points)


def _remainder_class(cfg, lambdas):
    profile, params = cfg['coefficient']['profile'], cfg['zones']['params']
    ts = _upper_zone_times(cfg, lambdas)
    if ts is None:
        return None
    try:
        return symbol_class_estimate(remainder_symbol(profile), -1.0, 2.0, profile, params, ts, lambdas)
    except ZoneBoundaryError as exc:
        logger.warning("remainder class estimate skipped: %s", exc)
        return None


def _remainder_integral(cfg, lambdas):
    profile, params = cfg['coefficient']['profile'], cfg['zones']['params']
    symbol = remainder_symbol(profile)
    try:
        check = integral_bound_check(lambda t, lam: abs(complex(symbol(t, lam))), lambdas, profile, params)
    except OutOfRangeError as exc:
        logger.warning("remainder integral skipped: %s", exc)
        return None
    return {'constant': check['constant'],
            'rows': [{'lambda': r.lam, 't_lambda': r.t_lambda, 'lhs': r.lhs, 'rhs': r.rhs}
                     for r in check['rows']]}


def _energy_gap(numeric, closed):
    observed = float(mode_energy(numeric.lam, numeric.u, numeric.ut, 1.0))
    expected = float(mode_energy(closed.lam, closed.u, closed.ut, 1.0))
    return abs(observed / expected - 1.0)


def _counterexample(cfg, emitter):
    ce = cfg['counterexample']
    nu = cfg['coefficient']['profile'].nu
    P = cfg['zones']['P']
    psi = calibrate_psi(ce['psi_r'])
    residual = verify_ode(ce['epsilon'], psi, np.linspace(0.0, 4 * math.pi, ODE_GRID_POINTS))
    multipliers = floquet_multipliers(ce['epsilon'], psi)
    c1 = _loss_constant(cfg)
    family = build_family(ce['epsilon'], P, ce['p'], nu, ce['a0'], ce['k_max'], c1, psi)
    members = solve_family(family)
    histories = [family_energy_history(member) for member in members]
    rows = demonstrate_blowup(family, 1.0, c1)

    midpoint_gaps, final_gaps = [], []
    for row, history, member in zip(rows, histories, members):
        # the numeric data at the left end is the closed form, so E(0) matches by construction
        midpoint_gaps.append(_energy_gap(member.numeric[1], member.closed[1]))
        final_gaps.append(abs(math.expm1(math.log(history.energies['T']) - row.log_ET)))
        if max(midpoint_gaps[-1], final_gaps[-1]) > MEMBER_ENERGY_AGREEMENT:
            raise ResidualError(f"member k={row.k}: numeric energy differs from the closed form "
                                f"(midpoint {midpoint_gaps[-1]:.3e}, at T {final_gaps[-1]:.3e})")
        if not history.conserved:
            raise ResidualError(f"member k={row.k}: energy not conserved outside I_k "
                                f"(drift {max(history.drift_before, history.drift_after):.3e})")

    manifest = family.manifest()
    manifest['checks'] = {
        'ode_residual': residual,
        'floquet_multipliers': [float(m.real) for m in multipliers],
        'member_mismatch': [m.mismatch for m in members],
        'energy_at_0': 'identity: numeric data at the left end of I_k is the closed form',
        'midpoint_energy_gap': midpoint_gaps,
        'final_energy_gap': final_gaps,
        'conservation_drift': [max(h.drift_before, h.drift_after) for h in histories],
    }
    emitter.document('family', manifest)
    emitter.table('blowup', ['k', 'lambda_k', 't_k', 'rho_k', 'E0', 'ET', 'weighted', 'log_weighted'],
                  [row.row() for row in rows])
    return 0, {'members': len(rows), 'c1': c1, 'log_weighted': [row.log_weighted for row in rows]}


def _classify(cfg, emitter):
    profile, params = cfg['coefficient']['profile'], cfg['zones']['params']
    label = classify_loss(profile.nu)
    summary = {'nu': profile.nu.kind, 'loss': label}
    lambdas = lambda_sweep(cfg['sweep'])
    lambdas = lambdas[lambdas > params.M]
    if lambdas.size > 1:
        try:
            summary['loss_exponent'] = loss_exponent(profile, params.P, _loss_constant(cfg), lambdas)
        except OutOfRangeError as exc:
            logger.warning("loss exponent skipped: %s", exc)
    emitter.document('classify', summary)
    return 0, summary


HANDLERS = {
    'eigen': _eigen,
    'zones': _zones,
    'solve': _solve,
    'verify': _verify,
    'counterexample': _counterexample,
    'classify': _classify,
}


def execute(command: str, raw: dict, overrides: Iterable[str] = ()) -> RunResult:
    """Run one command; configuration and numerical errors propagate as LabError."""
    if command not in COMMANDS:
        raise ConfigurationError(f"unknown command {command!r}; choose one of {', '.join(COMMANDS)}")
    raw = apply_overrides(raw, overrides)
    cfg = validate_config(raw)
    emitter = Emitter(cfg['output']['dir'] or settings.NULOSS_OUTPUT_DIR, raw, cfg['output']['format'])
    logger.info("running %s (config %s)", command, emitter.digest[:16])
    exit_code, summary = HANDLERS[command](cfg, emitter)
    logger.info("%s finished with exit code %d, %d files", command, exit_code, len(emitter.files))
    return RunResult(command, exit_code, summary, emitter.files, raw, emitter.digest)


def run(command: str, raw: dict, overrides: Iterable[str] = ()) -> RunResult:
    """Like execute, but errors become a result carrying their exit code."""
    try:
        return execute(command, raw, overrides)
    except LabError as exc:
        logger.error("%s failed: %s", command, exc)
        try:
            digest = config_hash(apply_overrides(raw, overrides))
        except LabError:
            digest = config_hash(raw)
        return RunResult(command, exc.exit_code, {'error': str(exc), 'error_type': type(exc).__name__},
                         [], raw, digest)
