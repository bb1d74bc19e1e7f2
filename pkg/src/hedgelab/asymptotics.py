"""Asymptotic variance coefficients of hedging errors.

Everything here is pointwise in (s, t): callers pass the local values of
the bandwidth mass ``a``, the weighted curvature ``gamma = lambda * p_ss``
and so on, and the harness maps the results along simulated paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from . import quadrature as quad

RTOL = 1e-10
ATOL = 1e-14
EXP_CAP = 100.0
GAMMA_ZERO = 1e-12
# h divides panel-interpolated masses by g, so g may fall at most e^-4 per panel
MAX_PANEL_LOG_DROP = 2.0


# ---------------------------------------------------------------------------
# closed-form coefficients


def eta_leland(alpha):
    """Equidistant-rebalancing coefficient alpha^2/pi + 2 alpha/pi + 1 - 2/pi."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0):
        raise ValueError("alpha must be nonnegative")
    out = alpha**2 / np.pi + 2.0 * alpha / np.pi + 1.0 - 2.0 / np.pi
    return float(out) if out.ndim == 0 else out


def eta_fukasawa(alpha):
    """Hitting-time rebalancing coefficient (alpha + 2)^2 / 6."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0):
        raise ValueError("alpha must be nonnegative")
    out = (alpha + 2.0) ** 2 / 6.0
    return float(out) if out.ndim == 0 else out


def eta_simple(alpha):
    """Pure reflection at half-width alpha*gamma/2: (alpha + 2)^2 / 12."""
    alpha = np.asarray(alpha, dtype=float)
    out = (alpha + 2.0) ** 2 / 12.0
    return float(out) if out.ndim == 0 else out


def eta_one(x):
    x = np.asarray(x, dtype=float)
    out = (4.0 / 3.0) * (x + 2.0) ** 2 * (x - 1.0) / (x**3 * (4.0 - x))
    return float(out) if out.ndim == 0 else out


def eta_two(x):
    x = np.asarray(x, dtype=float)
    out = (x + 2.0) ** 2 / 12.0
    return float(out) if out.ndim == 0 else out


def eta_dagger(x):
    """Minimal variance coefficient as a function of a / gamma (piecewise)."""
    xa = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(xa)):
        raise ValueError("x must be finite")
    out = np.zeros_like(xa)
    outer = (xa <= -2.0) | (xa >= 2.0)
    mid = (xa > 1.0) & (xa < 2.0)
    out[outer] = eta_two(xa[outer])
    out[mid] = eta_one(xa[mid])
    return float(out) if out.ndim == 0 else out


def leland_fukasawa_crossover(lo: float = 1.0, hi: float = 2.0, xtol: float = 1e-12) -> float:
    """Positive root of eta_fukasawa = eta_leland, by bisection."""
    return float(optimize.bisect(lambda a: eta_fukasawa(a) - eta_leland(a), lo, hi, xtol=xtol))


def drift_delta(gamma: float, gamma_abs_curv: float, lambda_val: float, a_val: float, alpha: float) -> float:
    """Drift density lambda |p_ss|^2 / a - |p_ss| / alpha.

    ``gamma`` is accepted for interface symmetry; only the curvature enters.
    """
    if not (a_val > 0 and alpha > 0):
        raise ValueError("a and alpha must be positive")
    k = abs(gamma_abs_curv)
    return float(lambda_val * k * k / a_val - k / alpha)


def pures_bandwidth(alpha: float, lambda_val: float, curv: float, eps: float = 0.0) -> float:
    """Half-width alpha lambda |p_ss| / 2 + eps of the pure reflection band."""
    if not alpha > 0 or lambda_val < 0 or eps < 0:
        raise ValueError("need alpha > 0, lambda >= 0, eps >= 0")
    return float(0.5 * alpha * lambda_val * abs(curv) + eps)


def eta_star(a_val: float, gamma: float) -> float:
    """gamma^2 eta_dagger(a / gamma), or a^2 / 12 when gamma = 0."""
    if not a_val > 0:
        raise ValueError("a must be positive")
    # outer branch in homogeneous form, which also covers gamma -> 0 without overflow
    if gamma == 0.0 or abs(a_val) >= 2.0 * abs(gamma):
        return (a_val + 2.0 * gamma) ** 2 / 12.0
    return gamma * gamma * eta_dagger(a_val / gamma)


def a_star(gamma: float, lambda_val: float, A: float, return_info: bool = False):
    """Minimizer over a > 0 of |gamma|/a + A lambda |gamma| eta_dagger(a/gamma).

    The objective is strictly decreasing while eta_dagger vanishes, so the
    search runs on a >= max(gamma, -2 gamma). It is not convex there (for
    gamma > 0 it has a kink at a = gamma and a concave stretch on (gamma,
    2 gamma)), so a dense logarithmic scan locates the basin, a bounded
    scalar search refines it, and the kink itself is kept as a candidate.
    """
    if gamma == 0.0 or not A > 0 or lambda_val < 0:
        raise ValueError("need gamma != 0, A > 0, lambda >= 0")
    g = abs(gamma)

    def F(a):
        return g / a + A * lambda_val * g * eta_dagger(a / gamma)

    edge = gamma if gamma > 0 else -2.0 * gamma
    if lambda_val == 0.0:
        raise ValueError("objective has no minimizer when lambda = 0")
    # eta_dagger(x) >= (|x| - 2)^2 / 12 once |x| >= 2, and the minimum is at
    # most F(2 edge), which bounds |x| = a / |gamma| at the minimizer
    reach = 1.5 * g * (2.0 + np.sqrt(12.0 * F(2.0 * edge) / (A * lambda_val * g))) + 2.0 * edge
    grid = edge * np.exp(np.linspace(0.0, np.log(reach / edge), 4001))
    vals = F(grid)
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = optimize.minimize_scalar(F, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12 * edge})
    best, kind = float(res.x), "interior"
    if gamma > 0 and F(edge) <= min(float(res.fun), float(vals[k])):
        best, kind = float(edge), "kink"
    elif float(vals[k]) < float(res.fun):
        best = float(grid[k])
    return (best, kind) if return_info else best


# ---------------------------------------------------------------------------
# control functions and the derived densities


@dataclass(frozen=True)
class PointControl:
    """Band half-width ``b`` and regular-control intensity ``c(|x|)`` at fixed (s, t).

    ``c=None`` means c = 0. ``breakpoints`` lists points where c may jump and
    ``scale`` hints the length scale on which c varies.
    """

    b: float
    c: Callable[[np.ndarray], np.ndarray] | None = None
    breakpoints: tuple = ()
    scale: float | None = None
    case_tag: str = "generic"

    def c_values(self, x) -> np.ndarray:
        x = np.abs(np.asarray(x, dtype=float))
        if self.c is None:
            return np.zeros_like(x)
        return np.asarray(self.c(x), dtype=float) * np.ones_like(x)


@dataclass(frozen=True)
class ControlFunctions:
    """b(s, t) > 0 and c(x, s, t) >= 0 even in x."""

    b: Callable[[float, float], float]
    c: Callable[[np.ndarray, float, float], np.ndarray] | None = None

    def at(self, s: float, t: float) -> PointControl:
        b = float(self.b(s, t))
        if not b > 0:
            raise ValueError(f"b must be positive, got {b} at s={s}, t={t}")
        if self.c is None:
            return PointControl(b=b)
        c = self.c
        return PointControl(b=b, c=lambda x, _s=s, _t=t: c(x, _s, _t), scale=b)


@dataclass
class DerivedDensities:
    """g, a and h on [-b, b] from panel tables built once per point."""

    b: float
    a: float
    edges: np.ndarray
    nodes: np.ndarray
    c_nodes: np.ndarray
    log_g_left: np.ndarray
    c_rel: np.ndarray  # integral of c from the panel's left edge to each node
    g_rel: np.ndarray  # g / g(left edge) at the nodes
    g_tot: np.ndarray
    c_tot: np.ndarray
    tail: np.ndarray  # integral of g beyond the panel's right edge, over g(right edge)
    extras: dict = field(default_factory=dict)

    def _locate(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        if np.any(ax > self.b * (1 + 1e-12)):
            raise ValueError("x outside [-b, b]")
        ax = np.minimum(ax, self.b)
        k = np.clip(np.searchsorted(self.edges, ax, side="right") - 1, 0, len(self.edges) - 2)
        lo, hi = self.edges[k], self.edges[k + 1]
        xi = 2.0 * (ax - lo) / (hi - lo) - 1.0
        return ax, k, xi, 0.5 * (hi - lo)

    def _local(self, x):
        ax, k, xi, half = self._locate(x)
        ax1 = np.atleast_1d(ax)
        k1, xi1, half1 = np.atleast_1d(k), np.atleast_1d(xi), np.atleast_1d(half)
        rows = quad.cumulative_row(xi1)
        c_rel = half1 * np.einsum("ij,ij->i", rows, self.c_nodes[k1])
        g_rel = np.exp(-2.0 * c_rel)
        # running mass of g/g(left) from the left edge, with g interpolated
        g_part = half1 * np.einsum("ij,ij->i", rows, self.g_rel[k1])
        return ax1, k1, c_rel, g_rel, g_part

    def g(self, x):
        x = np.asarray(x, dtype=float)
        _, k, c_rel, _, _ = self._local(x)
        out = np.exp(self.log_g_left[k] - 2.0 * c_rel)
        return out.reshape(x.shape)

    def h(self, x):
        x = np.asarray(x, dtype=float)
        _, k, _, g_rel, g_part = self._local(x)
        beyond = (self.g_tot[k] - g_part + np.exp(-2.0 * self.c_tot[k]) * self.tail[k]) / g_rel
        out = (2.0 / self.a) * beyond - 1.0
        out = np.where(np.atleast_1d(x) < 0, -out, out)
        return out.reshape(x.shape)

    def h_nodes(self) -> np.ndarray:
        beyond = (
            self.g_tot[:, None] - self.g_part_nodes + np.exp(-2.0 * self.c_tot)[:, None] * self.tail[:, None]
        ) / self.g_rel
        return (2.0 / self.a) * beyond - 1.0

    @property
    def g_part_nodes(self) -> np.ndarray:
        half = 0.5 * np.diff(self.edges)
        return half[:, None] * (self.g_rel @ quad.CUMULATIVE.T)

    def eta(self, gamma: float) -> float:
        """(2/a) * integral over [0, b] of (x - gamma h)^2 g."""
        half = 0.5 * np.diff(self.edges)
        h = self.h_nodes()
        integrand = (self.nodes - gamma * h) ** 2 * self.g_rel
        per_panel = half * (integrand @ quad.WEIGHTS)
        return float((2.0 / self.a) * np.sum(np.exp(self.log_g_left) * per_panel))


def derived_densities(ctrl, s: float | None = None, t: float | None = None,
                      rtol: float = RTOL, atol: float = ATOL) -> DerivedDensities:
    """Speed-measure density g, its mass a and the corrector h for a control.

    ``ctrl`` is a PointControl, or a ControlFunctions evaluated at (s, t).
    Integrals are computed panel by panel with g renormalized to 1 at each
    panel's left edge; the mass beyond every panel is accumulated from the
    right so that h near the band edge does not suffer cancellation.
    """
    if isinstance(ctrl, ControlFunctions):
        ctrl = ctrl.at(s, t)
    b = float(ctrl.b)
    if not (b > 0 and np.isfinite(b)):
        raise ValueError("b must be positive and finite")

    def panel(lo, hi, origin):
        x = quad.map_nodes(lo, hi)
        c = ctrl.c_values(x)
        if np.any(c < 0):
            raise ValueError("c must be nonnegative")
        cr = 0.5 * (hi - lo) * (quad.CUMULATIVE @ c)
        if origin < lo:
            cr = cr + 0.5 * (lo - origin) * float(quad.WEIGHTS @ ctrl.c_values(quad.map_nodes(origin, lo)))
        gr = np.exp(-2.0 * cr)
        # offsets from origin built from the reference nodes, not from x,
        # so they stay accurate when |x| is much larger than the panel
        u = (lo - origin) + 0.5 * (hi - lo) * (quad.NODES + 1.0)
        return np.vstack([c, gr, gr * u, gr * u * u])

    def drop_ok(lo, hi):
        c = ctrl.c_values(quad.map_nodes(lo, hi))
        return 0.5 * (hi - lo) * float(quad.WEIGHTS @ c) <= MAX_PANEL_LOG_DROP

    edges = quad.adaptive_panels(
        panel, 0.0, b, rtol, atol, ctrl.breakpoints, ctrl.scale, accept=drop_ok
    )
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    nodes = half[:, None] * quad.NODES[None, :] + (0.5 * (hi + lo))[:, None]
    c_nodes = ctrl.c_values(nodes)
    c_rel = half[:, None] * (c_nodes @ quad.CUMULATIVE.T)
    c_tot = half * (c_nodes @ quad.WEIGHTS)
    g_rel = np.exp(-2.0 * c_rel)
    g_tot = half * (g_rel @ quad.WEIGHTS)
    log_g_left = -2.0 * np.concatenate([[0.0], np.cumsum(c_tot)[:-1]])
    tail = np.zeros(len(half))
    for k in range(len(half) - 2, -1, -1):
        tail[k] = g_tot[k + 1] + np.exp(-2.0 * c_tot[k + 1]) * tail[k + 1]
    a = 2.0 * (g_tot[0] + np.exp(-2.0 * c_tot[0]) * tail[0])
    return DerivedDensities(
        b=b, a=float(a), edges=edges, nodes=nodes, c_nodes=c_nodes, log_g_left=log_g_left,
        c_rel=c_rel, g_rel=g_rel, g_tot=g_tot, c_tot=c_tot, tail=tail,
    )


@dataclass(frozen=True)
class EtaResult:
    value: float
    case_tag: str = "generic"


def eta_bc(ctrl, gamma: float, s: float | None = None, t: float | None = None) -> EtaResult:
    """Asymptotic variance coefficient of a reflected control at one point."""
    if isinstance(ctrl, ControlFunctions):
        ctrl = ctrl.at(s, t)
    dens = derived_densities(ctrl)
    value = dens.eta(gamma)
    return EtaResult(value=max(value, 0.0), case_tag=getattr(ctrl, "case_tag", "generic"))


# ---------------------------------------------------------------------------
# the asymptotically optimal family

CASES = ("gamma_zero", "le_minus_two", "below_one", "a_equals_gamma", "one_to_two", "ge_two")


def _tent(x, n):
    """Equals 1 outside |x - 1| < 1/n and 1 - 1/n at x = 1."""
    return 1.0 - np.maximum(1.0 / n - np.abs(x - 1.0), 0.0)


def optimal_family_params(a, gamma, n: int):
    """Vectorized parameters of the optimal family.

    Returns (case index, l, r, psi, K, b) where c(x) = K / (gamma + psi |x|)
    on l <= |x| < r and zero elsewhere. Case indices follow ``CASES``.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    a = np.asarray(a, dtype=float)
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), a.shape)
    if np.any(a <= 0):
        raise ValueError("a must be positive")
    case = np.zeros(a.shape, dtype=np.int64)
    zero = np.abs(gamma) < GAMMA_ZERO * a
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(zero, np.inf, a / np.where(zero, 1.0, gamma))
    same = ~zero & (np.abs(a - gamma) <= 1e-12 * a)
    case[~zero & (x <= -2.0)] = 1
    case[~zero & (x > -2.0) & (x < 1.0) & ~same] = 2
    case[same] = 3
    case[~zero & (x > 1.0) & (x < 2.0) & ~same] = 4
    case[~zero & (x >= 2.0)] = 5

    trivial = np.isin(case, (0, 1, 5))
    gm = np.where(trivial, 1.0, gamma)
    xm = np.where(trivial, 0.5, x)
    psi = np.where(trivial, 1.0, np.where(same, 1.0 - 1.0 / n, _tent(xm, n)))
    with np.errstate(divide="ignore", invalid="ignore"):
        l = np.where(trivial, 0.0, 2.0 * gm * gm * np.maximum(xm - 1.0, 0.0) / (4.0 * gm - a))
        inner = np.minimum(1.0 - 1.0 / n, np.maximum(-(2.0 * gm + a), 0.0))
        r = l + np.maximum(2.0 * gm - a, 0.0) * np.exp(min(n * n, EXP_CAP)) + np.abs(gm) * inner ** (1.0 / n)
        K = (a * psi + 2.0 * gm) / (2.0 * (a - 2.0 * l))
        b = r + (gm + psi * r) / (gm + psi * l) * (0.5 * a - l)
    r = np.where(trivial, 0.0, r)
    K = np.where(trivial, 0.0, K)
    b = np.where(trivial, 0.5 * a, b)
    # c = K / (gamma + psi x) must stay positive and finite on [l, r]
    lo_den, hi_den = gm + psi * l, gm + psi * r
    bad = ~trivial & ~((b > 0) & np.isfinite(b) & (K * lo_den > 0) & (lo_den * hi_den > 0))
    if np.any(bad):
        idx = np.flatnonzero(bad.ravel())[0]
        raise ValueError(f"optimal family ill-defined in branch {CASES[case.ravel()[idx]]} for n={n}")
    return case, l, r, psi, K, b


def log_g_optimal(x, l, r, psi, K, gamma):
    """Closed-form log g for the optimal family (used as an oracle)."""
    ax = np.clip(np.abs(np.asarray(x, dtype=float)), l, r)
    if K == 0.0:
        return np.zeros_like(ax)
    return -2.0 * (K / psi) * np.log((gamma + psi * ax) / (gamma + psi * l))


def optimal_controls(a_val: float, gamma: float, n: int) -> PointControl:
    """(b_n, c_n) of the optimal family at one point, tagged by branch."""
    case, l, r, psi, K, b = (float(v) if i else int(v) for i, v in enumerate(optimal_family_params(a_val, gamma, n)))
    tag = CASES[case]
    if K == 0.0:
        return PointControl(b=b, c=None, case_tag=tag)

    def c(x, _l=l, _r=r, _psi=psi, _K=K, _g=gamma):
        x = np.abs(np.asarray(x, dtype=float))
        inside = (x >= _l) & (x < _r)
        return np.where(inside, _K / (_g + _psi * np.where(inside, x, _l)), 0.0)

    scale = abs(gamma + psi * l) / psi
    return PointControl(b=b, c=c, breakpoints=(l, r), scale=scale, case_tag=tag)


def optimal_eta_details(a_val: float, gamma: float, n: int) -> dict:
    ctrl = optimal_controls(a_val, gamma, n)
    dens = derived_densities(ctrl)
    return {
        "case": ctrl.case_tag,
        "b": ctrl.b,
        "a_quadrature": dens.a,
        "eta": max(dens.eta(gamma), 0.0),
        "eta_star": eta_star(a_val, gamma),
    }
