"""Adaptive composite Gauss-Legendre quadrature.

Panels carry 16-point Gauss-Legendre rules. A panel is accepted when the
rule on the whole panel agrees with the sum of the rules on its two halves.
Besides plain integrals the module exposes the accepted panel mesh together
with a spectral cumulative-integration matrix, so that running integrals
can be evaluated at every node (and at arbitrary points) without a second
quadrature pass.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.polynomial import legendre as L

ORDER = 16
NODES, WEIGHTS = L.leggauss(ORDER)

# Lagrange basis on the reference nodes, expressed in Legendre coefficients.
_VINV = np.linalg.inv(L.legvander(NODES, ORDER - 1))
# Antiderivative (from -1) of every Lagrange basis polynomial.
_ANTI = np.stack([L.legint(_VINV[:, k], lbnd=-1.0) for k in range(ORDER)], axis=1)
# CUMULATIVE[j, k] = integral over [-1, NODES[j]] of the k-th basis polynomial.
CUMULATIVE = L.legvander(NODES, ORDER) @ _ANTI

MAX_PANELS = 20000


class QuadratureError(RuntimeError):
    """Adaptive refinement failed to reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved error estimate {achieved:.3e})")
        self.achieved = achieved


def map_nodes(lo: float, hi: float) -> np.ndarray:
    return 0.5 * (hi - lo) * NODES + 0.5 * (hi + lo)


def interpolation_row(xi: np.ndarray) -> np.ndarray:
    """Rows mapping nodal values to interpolant values at reference points ``xi``."""
    return L.legvander(np.atleast_1d(xi), ORDER - 1) @ _VINV


def cumulative_row(xi: np.ndarray) -> np.ndarray:
    """Rows mapping nodal values to the integral of the interpolant over [-1, xi]."""
    return L.legvander(np.atleast_1d(xi), ORDER) @ _ANTI


def initial_edges(
    lo: float,
    hi: float,
    breakpoints: Iterable[float] = (),
    scale: float | None = None,
) -> np.ndarray:
    """Starting mesh: breakpoints inside (lo, hi), plus geometric splitting of
    intervals much longer than ``scale`` so that mass near the left end of a
    huge interval is not missed by the first rule."""
    pts = sorted({float(lo), float(hi), *(float(p) for p in breakpoints if lo < p < hi)})
    edges = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        if scale is not None and scale > 0 and (b - a) > 64.0 * scale:
            w = max(scale, 1e-8 * abs(a))
            while a + w < b:
                edges.append(a + w)
                w *= 2.0
        edges.append(b)
    return np.asarray(edges, dtype=float)


def adaptive_panels(
    panel_values: Callable[[float, float, float], np.ndarray],
    lo: float,
    hi: float,
    rtol: float = 1e-10,
    atol: float = 1e-14,
    breakpoints: Iterable[float] = (),
    scale: float | None = None,
    accept: Callable[[float, float], bool] | None = None,
) -> np.ndarray:
    """Refine a panel mesh on [lo, hi] until every component is resolved.

    ``panel_values(a, b, origin)`` returns an array of shape ``(k, ORDER)``
    (or ``(ORDER,)``) with the integrand components evaluated at the mapped
    nodes of panel [a, b]. ``origin`` is the left edge of the panel under
    test, so integrands that are normalized at a reference point stay
    comparable between a panel and its two halves. ``accept(a, b)``, when given, is an extra condition a
    panel must meet. Returns the sorted array of accepted panel edges.
    """
    if not hi > lo:
        return np.array([lo, hi], dtype=float)

    def panel_integral(a: float, b: float, origin: float) -> np.ndarray:
        vals = np.atleast_2d(panel_values(a, b, origin))
        return 0.5 * (b - a) * (vals @ WEIGHTS)

    stack = []
    edges0 = initial_edges(lo, hi, breakpoints, scale)
    for a, b in zip(edges0[:-1], edges0[1:]):
        stack.append((a, b, panel_integral(a, b, a)))

    accepted: list[float] = [lo]
    worst = 0.0
    done: list[tuple[float, float]] = []
    n_panels = 0
    while stack:
        a, b, whole = stack.pop()
        m = 0.5 * (a + b)
        left = panel_integral(a, m, a)
        right = panel_integral(m, b, a)
        fine = left + right
        err = np.max(np.abs(fine - whole) - np.maximum(rtol * np.abs(fine), atol))
        tiny = (b - a) <= 1e-13 * max(abs(a), abs(b), 1.0)
        if accept is not None and not tiny and not accept(a, b):
            err = np.inf
        if err <= 0.0 or tiny:
            if tiny and err > 0.0 and np.isfinite(err):
                worst = max(worst, float(np.max(np.abs(fine - whole))))
            done.append((a, b))
            n_panels += 1
        else:
            # Right half pushed first so the left half is processed first.
            stack.append((m, b, panel_integral(m, b, m)))
            stack.append((a, m, left))
        if n_panels + len(stack) > MAX_PANELS:
            raise QuadratureError("panel budget exhausted", float(np.max(np.abs(fine - whole))))
    if worst > 0.0:
        raise QuadratureError("interval collapsed before convergence", worst)
    done.sort()
    accepted.extend(b for _, b in done)
    return np.asarray(accepted, dtype=float)


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    rtol: float = 1e-10,
    atol: float = 1e-14,
    breakpoints: Sequence[float] = (),
    scale: float | None = None,
) -> float:
    """Integral of a vectorized ``f`` over [lo, hi]."""
    if hi == lo:
        return 0.0
    sign = 1.0
    if hi < lo:
        lo, hi, sign = hi, lo, -1.0
    edges = adaptive_panels(
        lambda a, b, origin: f(map_nodes(a, b)), lo, hi, rtol, atol, breakpoints, scale
    )
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        total += 0.5 * (b - a) * float(WEIGHTS @ f(map_nodes(a, b)))
    return sign * total
