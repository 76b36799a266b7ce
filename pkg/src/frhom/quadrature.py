"""Globally adaptive Gauss-Legendre quadrature on intervals and rectangles.

Each panel is integrated with a fixed 16-point rule (tensor rule in 2-D)
and compared against the sum over its dyadic children; the difference is
the panel's error estimate.  The panel with the largest error is split
until the summed error drops below tolerance or every offending panel has
reached the refinement cap, in which case :class:`QuadratureError` is
raised with the achieved error attached.

Integrands are vectorized callables.  They may return several components
stacked on the leading axes (shape ``(m, ...)``); the error test then uses
the largest absolute component error against the largest absolute
component of the running total.
"""

import heapq
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import QuadratureError

GL_ORDER = 16
MAX_LEVEL = 12
_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(GL_ORDER)


@dataclass(frozen=True)
class QuadResult:
    value: np.ndarray | float
    error: float
    panels: int


def _norm(x):
    return float(np.max(np.abs(x))) if np.ndim(x) else abs(float(x))


def _rule_1d(func, bounds):
    # parent rule followed by the two halves, in a single integrand call
    a, b = bounds
    m = 0.5 * (a + b)
    spans = ((a, b), (a, m), (m, b))
    x = np.concatenate([0.5 * (lo + hi) + 0.5 * (hi - lo) * _NODES for lo, hi in spans])
    fx = np.asarray(func(x), dtype=float)
    fx = fx.reshape(fx.shape[:-1] + (3, GL_ORDER))
    half = np.array([0.5 * (hi - lo) for lo, hi in spans])
    vals = (fx @ _WEIGHTS) * half
    parent = vals[..., 0]
    fine = vals[..., 1] + vals[..., 2]
    return fine, _norm(fine - parent)


def _split_1d(bounds):
    a, b = bounds
    m = 0.5 * (a + b)
    return ((a, m), (m, b))


def _rule_2d(func, bounds):
    rects = (bounds,) + _split_2d(bounds)
    xs, ys, areas = [], [], []
    for x0, x1, y0, y1 in rects:
        hx, hy = 0.5 * (x1 - x0), 0.5 * (y1 - y0)
        gx = 0.5 * (x0 + x1) + hx * _NODES
        gy = 0.5 * (y0 + y1) + hy * _NODES
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        xs.append(X)
        ys.append(Y)
        areas.append(hx * hy)
    fxy = np.asarray(func(np.stack(xs), np.stack(ys)), dtype=float)
    vals = np.einsum("...rij,i,j->...r", fxy, _WEIGHTS, _WEIGHTS) * np.array(areas)
    parent = vals[..., 0]
    fine = vals[..., 1:].sum(axis=-1)
    return fine, _norm(fine - parent)


def _split_2d(bounds):
    ax, bx, ay, by = bounds
    mx, my = 0.5 * (ax + bx), 0.5 * (ay + by)
    return ((ax, mx, ay, my), (ax, mx, my, by), (mx, bx, ay, my), (mx, bx, my, by))


def _adaptive(func, roots, rule, split, rtol, atol, max_level):
    counter = itertools.count()
    heap = []
    frozen = []
    for bounds in roots:
        value, err = rule(func, bounds)
        heapq.heappush(heap, (-err, next(counter), 0, bounds, value))
    while True:
        entries = heap + [(e, s, lvl, bnd, val) for e, s, lvl, bnd, val in frozen]
        total = sum(val for _, _, _, _, val in entries)
        total_err = math.fsum(-e for e, *_ in entries)
        tol = max(atol, rtol * _norm(total))
        if total_err <= tol:
            return QuadResult(total, total_err, len(entries))
        if not heap:
            raise QuadratureError(
                f"adaptive quadrature did not converge within {max_level} levels "
                f"(error {total_err:.3e} > tolerance {tol:.3e})",
                achieved_error=total_err,
                value=total,
            )
        # refine every panel whose error exceeds its fair share; keeps the
        # number of passes logarithmic instead of one split per pass
        share = tol / max(len(entries), 1)
        batch = []
        while heap and (not batch or -heap[0][0] > share):
            batch.append(heapq.heappop(heap))
        for neg_err, seq, level, bounds, value in batch:
            if level >= max_level:
                frozen.append((neg_err, seq, level, bounds, value))
                continue
            for child in split(bounds):
                cval, cerr = rule(func, child)
                heapq.heappush(heap, (-cerr, next(counter), level + 1, child, cval))


def integrate_1d(func, a, b, rtol=1e-9, atol=0.0, max_level=MAX_LEVEL, initial_panels=1):
    """Integrate ``func`` over ``[a, b]`` with adaptive Gauss-Legendre panels.

    Parameters
    ----------
    func : callable
        Vectorized integrand ``func(x) -> array`` whose last axis matches ``x``.
    a, b : float
        Integration limits.
    rtol, atol : float
        Relative and absolute tolerance on the summed error estimate.
    max_level : int
        Maximum number of dyadic refinements of an initial panel.
    initial_panels : int
        Number of equal panels to start from.

    Returns
    -------
    QuadResult
    """
    edges = np.linspace(a, b, initial_panels + 1)
    roots = [(float(lo), float(hi)) for lo, hi in zip(edges[:-1], edges[1:])]
    return _adaptive(func, roots, _rule_1d, _split_1d, rtol, atol, max_level)


def integrate_2d(func, x_bounds, y_bounds, rtol=1e-9, atol=0.0, max_level=MAX_LEVEL,
                 initial_panels=1):
    """Integrate ``func(x, y)`` over a rectangle with a quadtree of tensor GL rules."""
    xe = np.linspace(*x_bounds, initial_panels + 1)
    ye = np.linspace(*y_bounds, initial_panels + 1)
    roots = [
        (float(xe[i]), float(xe[i + 1]), float(ye[j]), float(ye[j + 1]))
        for i in range(initial_panels)
        for j in range(initial_panels)
    ]
    return _adaptive(func, roots, _rule_2d, _split_2d, rtol, atol, max_level)
