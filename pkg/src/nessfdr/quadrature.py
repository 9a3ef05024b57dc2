"""Adaptive one-dimensional integration with explicit convergence records.

A Gauss(7)/Kronrod(15) pair is applied per panel; the worst panel is
bisected until the summed error estimate meets the requested tolerance or
the evaluation budget runs out. Integrands must be vectorised: they are
called with a 1-D array of abscissae and may return either a matching 1-D
array (scalar integrand) or an array with extra trailing dimensions
(matrix-valued integrand).

Known peak locations (resonances) can be passed as pre-split points so the
refinement never has to discover a narrow Lorentzian by bisection alone.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import NonConvergence

__all__ = ["Panel", "FrequencyGrid", "integrate", "integrate_vector", "resonance_hints"]

# 15-point Kronrod abscissae (positive half) and weights; 7-point Gauss
# weights sit on the odd-indexed Kronrod nodes. Standard QUADPACK constants.
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])          # 15 ascending nodes
_KWEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GWEIGHTS = np.zeros(15)
_GWEIGHTS[1:-1:2] = np.concatenate([_WG[:-1], _WG[::-1]])  # Gauss nodes are odd-indexed


@dataclass
class Panel:
    a: float
    b: float
    estimate: float   # Frobenius norm for matrix integrands
    error: float


@dataclass
class FrequencyGrid:
    """Panel decomposition plus the convergence certificate of one integral."""

    panels: list = field(default_factory=list)
    total: float = 0.0
    total_error: float = float("inf")
    evaluations: int = 0
    converged: bool = False

    def summary(self) -> dict:
        return {
            "panels": len(self.panels),
            "total": self.total,
            "total_error": self.total_error,
            "evaluations": self.evaluations,
            "converged": self.converged,
            "domain": [self.panels[0].a, self.panels[-1].b] if self.panels else None,
        }


def _gk_panel(f, a, b):
    """One Gauss-Kronrod pass: (kronrod value, error estimate, node count)."""
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    x = mid + half * _NODES
    v = np.asarray(f(x))
    resk = half * np.tensordot(_KWEIGHTS, v, axes=(0, 0))
    resg = half * np.tensordot(_GWEIGHTS, v, axes=(0, 0))
    # scale-aware QUADPACK-style error estimate
    reskh = resk / (b - a)
    resasc = half * np.tensordot(_KWEIGHTS, np.abs(v - reskh), axes=(0, 0))
    diff = np.abs(resk - resg)
    err = np.max(diff)
    asc = np.max(resasc)
    if asc > 0 and err > 0:
        err = asc * min(1.0, (200.0 * err / asc) ** 1.5)
    return resk, float(err), 15


def _refine(f, a, b, tol_abs, tol_rel, points, max_evals):
    """Shared adaptive engine. Returns (value, error, grid)."""
    if not b > a:
        raise ValueError(f"empty integration domain [{a}, {b}]")
    edges = [a] + sorted(p for p in set(points or ()) if a < p < b) + [b]

    heap = []  # (-error, counter, a, b, value)
    counter = 0
    evals = 0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, err, ne = _gk_panel(f, lo, hi)
        evals += ne
        heapq.heappush(heap, (-err, counter, lo, hi, val))
        counter += 1

    def totals():
        tot = None
        toterr = 0.0
        for negerr, _, _, _, val in heap:
            tot = val if tot is None else tot + val
            toterr += -negerr
        return tot, toterr

    total, total_error = totals()
    while True:
        goal = max(tol_abs, tol_rel * float(np.max(np.abs(total))))
        if total_error <= goal:
            converged = True
            break
        if evals >= max_evals:
            converged = False
            break
        negerr, _, lo, hi, _ = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        for seg in ((lo, mid), (mid, hi)):
            val, err, ne = _gk_panel(f, *seg)
            evals += ne
            heapq.heappush(heap, (-err, counter, seg[0], seg[1], val))
            counter += 1
        total, total_error = totals()

    panels = sorted(heap, key=lambda item: item[2])
    grid = FrequencyGrid(
        panels=[Panel(p[2], p[3], float(np.linalg.norm(np.atleast_1d(p[4]))), -p[0]) for p in panels],
        total=float(np.linalg.norm(np.atleast_1d(total))),
        total_error=total_error,
        evaluations=evals,
        converged=converged,
    )
    return total, total_error, grid


def integrate(f, a, b, tol_abs=1e-10, tol_rel=1e-8, points=(), max_evals=1_000_000):
    """Integrate a scalar vectorised integrand over [a, b].

    Returns ``(value, error, FrequencyGrid)``. Raises
    :class:`~nessfdr.errors.NonConvergence` (with the best estimate attached)
    if the evaluation budget is exhausted first.
    """
    value, error, grid = _refine(f, a, b, tol_abs, tol_rel, points, max_evals)
    value = float(value)
    grid.total = value
    if not grid.converged:
        raise NonConvergence(
            f"integration budget exhausted: error {error:.3e} after {grid.evaluations} evaluations",
            value=value, error=error, grid=grid,
        )
    return value, error, grid


def integrate_vector(f, a, b, tol_abs=1e-10, tol_rel=1e-8, points=(), max_evals=1_000_000,
                     raise_on_budget=True):
    """Like :func:`integrate` for integrands returning shape (nodes, ...).

    The error estimate and convergence test use the max-abs component;
    ``FrequencyGrid.total`` records the Frobenius norm of the result.
    """
    value, error, grid = _refine(f, a, b, tol_abs, tol_rel, points, max_evals)
    if not grid.converged and raise_on_budget:
        raise NonConvergence(
            f"integration budget exhausted: error {error:.3e} after {grid.evaluations} evaluations",
            value=value, error=error, grid=grid,
        )
    return value, error, grid


def resonance_hints(sys) -> list:
    """Normal-mode frequencies of the chain: the peaks every integrand shares."""
    return [float(w) for w in sys.normal_modes()]
