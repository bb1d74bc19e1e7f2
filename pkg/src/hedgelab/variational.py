"""Brute-force oracle for the reduced variational problem.

The problem: minimize

    eta_a[y] = int_0^1 (y(u) + gamma + (2 gamma / a)(u - 1) y'(u))^2 du

over increasing convex y on [0, 1] with y(0) = 0 and y'(0) = a/2. Candidates
are piecewise linear and are parameterized by nonnegative slope increments
at interior knots, so every candidate is admissible by construction and the
objective is a convex quadratic in the increments.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numba
import numpy as np

from .asymptotics import eta_star

SLOPE_TOL = 1e-12
GRADING = 4.0


@dataclass(frozen=True)
class ConvexPL:
    """Piecewise linear function through (knots[i], values[i])."""

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        if knots.ndim != 1 or knots.shape != values.shape or knots.size < 2:
            raise ValueError("knots and values must be 1-d arrays of equal length >= 2")
        if knots[0] != 0.0 or knots[-1] != 1.0 or np.any(np.diff(knots) <= 0):
            raise ValueError("knots must increase from 0 to 1")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")

    @classmethod
    def from_slopes(cls, knots, slopes) -> "ConvexPL":
        knots = np.asarray(knots, dtype=float)
        values = np.concatenate([[0.0], np.cumsum(np.asarray(slopes, float) * np.diff(knots))])
        return cls(knots, values)

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.knots)

    @property
    def m(self) -> int:
        return self.knots.size - 1

    def __call__(self, u):
        return np.interp(u, self.knots, self.values)

    def check_admissible(self, a_val: float) -> None:
        """Raise ValueError unless the function lies in the constraint set."""
        sl = self.slopes
        scale = max(abs(a_val), float(np.max(np.abs(sl))), 1.0)
        if abs(self.values[0]) > SLOPE_TOL * scale:
            raise ValueError("y(0) must be 0")
        if abs(sl[0] - 0.5 * a_val) > 1e-9 * scale:
            raise ValueError(f"first slope {sl[0]!r} differs from a/2 = {0.5 * a_val!r}")
        # slopes recovered from values lose about eps * |y| / width near u = 1
        slack = 1e-9 * np.abs(sl[1:]) + 64.0 * np.finfo(float).eps * np.max(np.abs(self.values)) / np.diff(self.knots)[1:]
        if np.any(np.diff(sl) < -slack):
            raise ValueError("slopes must be nondecreasing (convexity)")
        if np.any(sl <= 0):
            raise ValueError("slopes must be positive")


def _integrand_values(y: ConvexPL, a_val: float, gamma: float):
    """Integrand at (left, mid, right) of every segment; it is linear on each."""
    u0, u1 = y.knots[:-1], y.knots[1:]
    um = 0.5 * (u0 + u1)
    sl = y.slopes
    beta = 2.0 * gamma / a_val
    y0 = y.values[:-1]

    def f(u):
        return y0 + sl * (u - u0) + gamma + beta * (u - 1.0) * sl

    return f(u0), f(um), f(u1)


def eta_functional(y: ConvexPL, a_val: float, gamma: float) -> float:
    """Exact value of eta_a[y] for a piecewise linear admissible ``y``.

    The integrand is linear on each segment, so its square is quadratic and
    Simpson's rule per segment has no quadrature error.
    """
    if not a_val > 0:
        raise ValueError("a must be positive")
    y.check_admissible(a_val)
    f0, fm, f1 = _integrand_values(y, a_val, gamma)
    h = np.diff(y.knots)
    return float(np.sum(h / 6.0 * (f0**2 + 4.0 * fm**2 + f1**2)))


def eta_segment(v: float, w: float, z: float, beta: float, gamma: float) -> float:
    """Closed form of int_v^1 (w + z(u - v) + gamma + beta (u - 1) z)^2 du."""
    if not v < 1.0:
        raise ValueError("v must be below 1")
    q = beta * beta - beta + 1.0
    one_v = 1.0 - v
    shift = 1.5 * (1.0 - beta) / q * (gamma + w) / one_v
    return (q / 3.0) * one_v**3 * (z + shift) ** 2 + ((beta + 1.0) ** 2 / (4.0 * q)) * (gamma + w) ** 2 * one_v


def case5_shift_bound(beta: float, v: float, w: float, gamma: float) -> float:
    """Left side of the bound -(3/2)((1-beta)/(beta^2-beta+1))((gamma+w)/(1-v)) <= a/2."""
    return -1.5 * (1.0 - beta) / (beta * beta - beta + 1.0) * (gamma + w) / (1.0 - v)


# ---------------------------------------------------------------------------
# the tail construction between one and two


def _require_between_one_and_two(a_val: float, gamma: float) -> None:
    if not (gamma > 0 and 1.0 < a_val / gamma < 2.0):
        raise ValueError(f"requires gamma > 0 and 1 < a/gamma < 2 (got a={a_val}, gamma={gamma})")


def case3_knot(a_val: float, gamma: float) -> tuple[float, float]:
    """Junction (u0, r) where the line au/2 meets r(1-u)^(a/2gamma - 1) - gamma with matching slope."""
    _require_between_one_and_two(a_val, gamma)
    g, a = gamma, a_val
    u0 = 4.0 * g * (a - g) / (a * (4.0 * g - a))
    one_u0 = (4.0 * g * g - a * a) / (a * (4.0 * g - a))
    r = (a * g / (2.0 * g - a)) * one_u0 ** (2.0 - a / (2.0 * g))
    return u0, r


def case3_knot_residuals(a_val: float, gamma: float) -> tuple[float, float]:
    u0, r = case3_knot(a_val, gamma)
    p = a_val / (2.0 * gamma)
    first = 0.5 * a_val * u0 - (r * (1.0 - u0) ** (p - 1.0) - gamma)
    second = 0.5 * a_val - r * (1.0 - p) * (1.0 - u0) ** (p - 2.0)
    return first, second


def _tail_knot(z, u, y_val, a_val, gamma):
    g, a = gamma, a_val
    return 2 * g / (4 * g - a) + (2 * g - a) * (u - (g + y_val) / z) / (4 * g - a)


def _tail_composite(z, u, y_val, a_val, gamma):
    """eta of: slope z from (u, y) up to v(z), then the optimal power-law tail.

    Integer constants only, so that Fraction arguments stay exact.
    """
    g, a = gamma, a_val
    v = _tail_knot(z, u, y_val, a, g)
    k = g + y_val - z * (u + 2 * g / a)
    slope = 1 + 2 * g / a
    tail = 16 * g**3 * (a - g) * z * z * (1 - v) ** 3 / (a * a * (2 * g - a) ** 2)
    return (
        tail
        + slope**2 * z * z * (v**3 - u**3) / 3
        + slope * z * k * (v * v - u * u)
        + (v - u) * k * k
    )


def _tail_derivative_factored(z, u, y_val, a_val, gamma):
    g, a = gamma, a_val
    return (
        (4 * g * z * (1 - u) + (2 * g - a) * (g + y_val))
        * (2 * g * z * (1 - u) - (2 * g - a) * (g + y_val)) ** 2
        / (3 * z * z * a * a * (4 * g - a))
    )


def case3_tail_derivative_check(u: float, y_val: float, z: float, a_val: float, gamma: float):
    """(central-difference derivative, factored closed form) of the composite in z.

    The composite is rational in z, so both sides are evaluated in exact
    rational arithmetic: the difference quotient then carries only its
    O(step^2) truncation error, even where the squared factor nearly vanishes.
    """
    _require_between_one_and_two(a_val, gamma)
    if not z >= 0.5 * a_val:
        raise ValueError("z must be at least a/2")
    v = _tail_knot(z, u, y_val, a_val, gamma)
    # v == u is the boundary where the linear piece is empty; it is kept so
    # that the root of the squared factor can be evaluated.
    if not (u <= v < 1.0):
        raise ValueError(f"tail knot v(z)={v!r} outside [u, 1)")
    zq, uq, yq, aq, gq = (Fraction(x) for x in (z, u, y_val, a_val, gamma))
    step = zq * Fraction(1, 10**9)
    lhs = (
        _tail_composite(zq + step, uq, yq, aq, gq) - _tail_composite(zq - step, uq, yq, aq, gq)
    ) / (2 * step)
    rhs = _tail_derivative_factored(zq, uq, yq, aq, gq)
    return float(lhs), float(rhs)


# ---------------------------------------------------------------------------
# brute-force minimizer


def oracle_knots(m: int, a_val: float, gamma: float, grading: float = GRADING) -> np.ndarray:
    """Knots 1 - u_j = (1 - j/m)^grading for an m-segment candidate.

    The optimizers steepen like a power of 1 - u near u = 1, and the cost of
    a segment grows like slope^2 * width^3, so knots are graded toward 1.
    Between one and two the junction u0 replaces the nearest interior knot.
    """
    m = int(m)
    if m < 8:
        raise ValueError("need at least 8 segments")
    knots = 1.0 - (1.0 - np.arange(m + 1) / m) ** grading
    knots[0], knots[-1] = 0.0, 1.0
    if gamma > 0 and 1.0 < a_val / gamma < 2.0:
        u0 = case3_knot(a_val, gamma)[0]
        i = 1 + int(np.argmin(np.abs(knots[1:-1] - u0)))
        knots[i] = u0
        knots = np.sort(knots)
    return knots


def _quadratic_form(knots: np.ndarray, a_val: float, gamma: float):
    """(c0, q, G) with eta = c0 + 2 q.d + d.G.d for slope increments d at interior knots."""
    beta = 2.0 * gamma / a_val
    lo, hi = knots[:-1], knots[1:]
    h = hi - lo
    pts = np.stack([lo, 0.5 * (lo + hi), hi], axis=1)  # (m, 3)
    wts = (h[:, None] / 6.0) * np.array([1.0, 4.0, 1.0])
    base = 0.5 * a_val * pts + gamma + beta * (pts - 1.0) * 0.5 * a_val
    interior = knots[1:-1]
    # basis i is active on segments j >= i + 1 (segment j spans knots[j]..knots[j+1])
    seg = np.arange(h.size)[:, None, None]
    active = seg >= (np.arange(interior.size)[None, None, :] + 1)
    phi = np.where(active, (pts[:, :, None] - interior) + beta * (pts[:, :, None] - 1.0), 0.0)
    phi = phi.reshape(-1, interior.size)
    w = wts.reshape(-1)
    b = base.reshape(-1)
    G = phi.T @ (w[:, None] * phi)
    q = phi.T @ (w * b)
    c0 = float(np.sum(w * b * b))
    return c0, q, G


@numba.njit(cache=True, nogil=True)
def _coordinate_descent(G, q, d, sweeps, tol):
    n = d.size
    grad = G @ d + q
    for _ in range(sweeps):
        moved = 0.0
        for i in range(n):
            gii = G[i, i]
            if gii <= 0.0:
                continue
            new = d[i] - grad[i] / gii
            if new < 0.0:
                new = 0.0
            step = new - d[i]
            if step != 0.0:
                for k in range(n):
                    grad[k] += G[k, i] * step
                d[i] = new
                rel = abs(step) / (abs(new) + 1e-300)
                if rel > moved:
                    moved = rel
        if moved < tol:
            break
    return d


@dataclass
class OracleResult:
    value: float
    y: ConvexPL
    quadratic_value: float
    restarts: int


def brute_force_min(
    a_val: float,
    gamma: float,
    m: int = 64,
    iters: int = 20000,
    restarts: int = 20,
    seed: int = 0,
    knots: np.ndarray | None = None,
) -> OracleResult:
    """Minimize eta_functional over m-segment convex candidates.

    Projected coordinate descent on the slope increments, from ``restarts``
    random starting points; the best candidate is re-evaluated with the
    independent per-segment evaluator.
    """
    if not a_val > 0:
        raise ValueError("a must be positive")
    if iters < 1000:
        raise ValueError("iters must be at least 1000")
    if knots is None:
        knots = oracle_knots(m, a_val, gamma)
    knots = np.asarray(knots, dtype=float)
    c0, q, G = _quadratic_form(knots, a_val, gamma)
    rng = np.random.default_rng(seed)
    scale = 0.5 * a_val + abs(gamma)
    best_d, best_val = None, np.inf
    for k in range(restarts):
        d0 = np.zeros(q.size) if k == 0 else rng.exponential(scale, q.size)
        d = _coordinate_descent(G, q, d0, int(iters), 1e-13)
        val = c0 + 2.0 * q @ d + d @ G @ d
        if val < best_val:
            best_val, best_d = float(val), d.copy()
    slopes = 0.5 * a_val + np.concatenate([[0.0], np.cumsum(best_d)])
    y = ConvexPL.from_slopes(knots, slopes)
    return OracleResult(eta_functional(y, a_val, gamma), y, best_val, restarts)


def oracle_row(a_val: float, gamma: float, m: int = 64, iters: int = 20000) -> dict:
    """One line of the optimize-y table."""
    from .asymptotics import CASES, optimal_family_params

    res = brute_force_min(a_val, gamma, m=m, iters=iters)
    target = eta_star(a_val, gamma)
    case = CASES[int(optimal_family_params(a_val, gamma, 4)[0])]
    gap = (res.value - target) / target if target > 0 else res.value - target
    return {
        "a": a_val,
        "gamma": gamma,
        "case": case,
        "oracle_min": res.value,
        "eta_star": target,
        "rel_gap": gap,
        "m": m,
    }
