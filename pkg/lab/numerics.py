"""Numerical building blocks shared by the laboratory modules."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from django.conf import settings
from numpy.polynomial import legendre
from scipy import optimize

from .exceptions import ComputationError, OutOfRangeError

logger = logging.getLogger(__name__)

T_FLOOR = 1e-300
BISECTION_MAXITER = 200
GROWTH_TOLERANCE = 0.01
GROWTH_STREAK = 3
POINTS_PER_OCTAVE = 8


def geometric_grid(T, size, per_octave=POINTS_PER_OCTAVE):
    """t_j = T * 2^(-j/per_octave) for j = 0..size, largest first."""
    return T * np.exp2(-np.arange(size + 1) / per_octave)


def grows_unboundedly(suprema, tolerance=GROWTH_TOLERANCE, streak=GROWTH_STREAK):
    """True when the last ``streak`` refinements each raised the supremum by more than ``tolerance``."""
    sups = np.asarray(suprema, dtype=float)
    if sups.size < streak + 1:
        return False
    growth = sups[1:] > (1.0 + tolerance) * sups[:-1]
    return bool(np.all(growth[-streak:]))


def bisect_log(g, lo, hi, what='root'):
    """Root of the increasing function ``g`` on [lo, hi], bisecting in log t."""
    lo = max(lo, T_FLOOR)
    g_lo, g_hi = g(lo), g(hi)
    if g_lo > 0 or g_hi < 0:
        raise OutOfRangeError(f"{what} is not bracketed by [{lo!r}, {hi!r}]")
    if g_lo == 0:
        return lo
    if g_hi == 0:
        return hi
    try:
        log_root = optimize.bisect(lambda s: g(math.exp(s)), math.log(lo), math.log(hi),
                                   xtol=1e-15, rtol=4 * np.finfo(float).eps,
                                   maxiter=BISECTION_MAXITER)
    except RuntimeError as exc:
        raise ComputationError(f"bisection for {what} did not converge: {exc}") from exc
    return math.exp(log_root)


def gauss_legendre(a, b, panels, order=32):
    """Nodes and weights of a composite Gauss-Legendre rule on [a, b]."""
    x, w = legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _lobatto_integration(order):
    x = -np.cos(np.pi * np.arange(order) / (order - 1))
    inverse = np.linalg.inv(legendre.legvander(x, order - 1))
    antiderivative = legendre.legint(inverse, lbnd=-1, axis=0)
    return x, legendre.legvander(x, order) @ antiderivative


class PanelGrid:
    """
    Piecewise Chebyshev-Lobatto grid on [a, b] with a spectral cumulative integral.

    ``a`` may exceed ``b``; integrals are then taken in the backward direction.
    """

    def __init__(self, a, b, panels, order=16):
        if panels < 1 or order < 3:
            raise ValueError("a panel grid needs at least one panel of order three")
        self.a, self.b = float(a), float(b)
        self.panels, self.order = int(panels), int(order)
        x, self._matrix = _lobatto_integration(self.order)
        edges = np.linspace(self.a, self.b, self.panels + 1)
        self._half = (self.b - self.a) / (2 * self.panels)
        mid = 0.5 * (edges[1:] + edges[:-1])
        self._index = (np.arange(self.panels)[:, None] * (self.order - 1)
                       + np.arange(self.order)[None, :])
        nodes = np.empty(self.panels * (self.order - 1) + 1)
        nodes[self._index] = mid[:, None] + self._half * x[None, :]
        nodes[0], nodes[-1] = self.a, self.b
        self.nodes = nodes

    def __len__(self):
        return self.nodes.size

    def cumulative(self, values):
        """Integral from ``a`` to every node; trailing axes of ``values`` are carried along."""
        values = np.asarray(values)
        local = self._half * np.einsum('ij,pj...->pi...', self._matrix, values[self._index])
        offsets = np.cumsum(local[:, -1], axis=0)
        offsets = np.concatenate([np.zeros_like(offsets[:1]), offsets[:-1]], axis=0)
        result = np.empty(values.shape, dtype=np.result_type(values, float))
        result[self._index] = local + offsets[:, None]
        return result

    def integral(self, values):
        return self.cumulative(values)[-1]


def parallel_map(fn, items):
    """Map ``fn`` over ``items`` with a thread pool, keeping input order."""
    items = list(items)
    workers = getattr(settings, 'NULOSS_THREADS', 0) or None
    if len(items) < 2 or workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))
