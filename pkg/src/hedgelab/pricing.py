"""Prices under the enlarged-volatility pricing equation.

The modified pricing equation is

    p_t + 1/2 (1 + sgn(p_ss) 2/alpha) sigma^2 p_ss = 0,   p(s, T) = f(s).

For a convex payoff under Black-Scholes with constant alpha the solution is
the zero-rate Black-Scholes price at volatility v sqrt(1 + 2/alpha). For
anything else the equation is solved on a log-price grid by Crank-Nicolson
with a frozen-sign fixed point for the nonlinearity.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import ndtr

from .market_model import ModelSpec

GAMMA_DEAD_ZONE = 1e-10
MAX_SWEEPS = 5
RANNACHER_STEPS = 8
FIRST_STEP_SPLIT = 32

PAYOFF_KINDS = ("call", "put", "s_log_s", "linear", "custom")


@dataclass(frozen=True)
class PayoffSpec:
    kind: str
    strike: float | None = None
    grid: tuple | None = None  # (s_values, f_values) for custom payoffs
    convex: bool = True

    def __post_init__(self):
        if self.kind not in PAYOFF_KINDS:
            raise ValueError(f"unknown payoff kind {self.kind!r}")
        if self.kind in ("call", "put") and not (self.strike is not None and self.strike > 0):
            raise ValueError("call/put payoffs need a positive strike")
        if self.kind == "custom":
            if self.grid is None:
                raise ValueError("custom payoff needs sampled values")
            xs, ys = (np.asarray(g, dtype=float) for g in self.grid)
            if xs.shape != ys.shape or xs.ndim != 1 or len(xs) < 3:
                raise ValueError("custom payoff grid must be two equal 1-d sequences")
            if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
                raise ValueError("custom payoff must be finite on its grid")
            if np.any(np.diff(xs) <= 0):
                raise ValueError("custom payoff grid must be increasing")

    @classmethod
    def call(cls, strike: float) -> "PayoffSpec":
        return cls("call", strike=float(strike))

    @classmethod
    def put(cls, strike: float) -> "PayoffSpec":
        return cls("put", strike=float(strike))

    @classmethod
    def s_log_s(cls) -> "PayoffSpec":
        return cls("s_log_s")

    @classmethod
    def linear(cls) -> "PayoffSpec":
        return cls("linear", convex=True)

    @classmethod
    def custom(cls, s_values, f_values, convex: bool = False) -> "PayoffSpec":
        return cls("custom", grid=(tuple(map(float, s_values)), tuple(map(float, f_values))), convex=convex)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "call":
            return np.maximum(s - self.strike, 0.0)
        if self.kind == "put":
            return np.maximum(self.strike - s, 0.0)
        if self.kind == "s_log_s":
            return s * np.log(s)
        if self.kind == "linear":
            return s.copy()
        xs, ys = self.grid
        return np.interp(s, xs, ys)

    def slope(self, s):
        """Derivative, with the midpoint subgradient at kinks."""
        s = np.asarray(s, dtype=float)
        if self.kind == "call":
            return np.where(s > self.strike, 1.0, np.where(s < self.strike, 0.0, 0.5))
        if self.kind == "put":
            return np.where(s < self.strike, -1.0, np.where(s > self.strike, 0.0, -0.5))
        if self.kind == "s_log_s":
            return np.log(s) + 1.0
        if self.kind == "linear":
            return np.ones_like(s)
        xs, ys = (np.asarray(g) for g in self.grid)
        return np.interp(s, xs, np.gradient(ys, xs))

    def curvature(self, s):
        """Second derivative away from kinks (zero for piecewise-linear payoffs)."""
        s = np.asarray(s, dtype=float)
        if self.kind == "s_log_s":
            return 1.0 / s
        if self.kind == "custom":
            xs, ys = (np.asarray(g) for g in self.grid)
            return np.interp(s, xs, np.gradient(np.gradient(ys, xs), xs))
        return np.zeros_like(s)


@dataclass(frozen=True)
class AlphaSpec:
    """Constant ``value`` or a positive function ``fn(s, t)``."""

    value: float | None = None
    fn: Callable | None = None

    def __post_init__(self):
        if (self.value is None) == (self.fn is None):
            raise ValueError("give exactly one of a constant alpha or an alpha function")
        if self.value is not None and not self.value > 0:
            raise ValueError("alpha must be positive")

    @property
    def is_constant(self) -> bool:
        return self.value is not None

    def at(self, s, t):
        if self.value is not None:
            return np.full_like(np.asarray(s, dtype=float), self.value)
        out = np.asarray(self.fn(s, t), dtype=float)
        if np.any(out <= 0) or not np.all(np.isfinite(out)):
            raise ValueError("alpha function must be positive and finite")
        return out


AlphaLike = Union[AlphaSpec, float]


def as_alpha(alpha: AlphaLike) -> AlphaSpec:
    return alpha if isinstance(alpha, AlphaSpec) else AlphaSpec(value=float(alpha))


def enlarged_vol(v: float, alpha: float) -> float:
    """Pricing volatility v sqrt(1 + 2/alpha)."""
    if not (v > 0 and alpha > 0):
        raise ValueError("v and alpha must be positive")
    return float(v * np.sqrt(1.0 + 2.0 / alpha))


def bs_closed_form(s, t, payoff: PayoffSpec, v_hat: float, T: float, with_flag: bool = False):
    """Zero-rate Black-Scholes price, delta and gamma at volatility ``v_hat``.

    At or after maturity returns (f(s), midpoint subgradient, 0). With
    ``with_flag`` a boolean array marking those terminal points is appended.
    Also accepts the ``s_log_s`` and ``linear`` payoffs, whose solutions are
    explicit as well.
    """
    s = np.asarray(s, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), s.shape)
    tau = T - t
    terminal = tau <= 0.0
    live = ~terminal
    p = np.asarray(payoff(s), dtype=float).copy()
    delta = np.asarray(payoff.slope(s), dtype=float).copy()
    gamma = np.zeros_like(s)
    kind = payoff.kind
    if kind in ("call", "put"):
        K = payoff.strike
        sl, taul = s[live], tau[live]
        sq = v_hat * np.sqrt(taul)
        d1 = (np.log(sl / K) + 0.5 * sq * sq) / sq
        d2 = d1 - sq
        nd1 = ndtr(d1)
        gam = np.exp(-0.5 * d1 * d1) / (np.sqrt(2.0 * np.pi) * sl * sq)
        if kind == "call":
            p[live] = sl * nd1 - K * ndtr(d2)
            delta[live] = nd1
        else:
            p[live] = K * ndtr(-d2) - sl * ndtr(-d1)
            delta[live] = nd1 - 1.0
        gamma[live] = gam
    elif kind == "s_log_s":
        sl, taul = s[live], tau[live]
        shift = 0.5 * v_hat * v_hat * taul
        p[live] = sl * np.log(sl) + shift * sl
        delta[live] = np.log(sl) + 1.0 + shift
        gamma[live] = 1.0 / sl
        gamma[terminal] = 1.0 / s[terminal]
    elif kind != "linear":
        raise ValueError("closed form available for call, put, s_log_s and linear payoffs only")
    if with_flag:
        return p, delta, gamma, terminal
    return p, delta, gamma


@dataclass
class PricingSurface:
    """Either a closed form (``kind='closed_form'``) or a grid (``kind='grid'``).

    Grid arrays have shape (len(t_nodes), len(s_nodes)).
    """

    kind: str
    model: ModelSpec
    payoff: PayoffSpec
    alpha: AlphaSpec
    v_hat: float | None = None
    s_nodes: np.ndarray | None = None
    t_nodes: np.ndarray | None = None
    p: np.ndarray | None = None
    delta: np.ndarray | None = None
    gamma: np.ndarray | None = None
    flagged_levels: list = field(default_factory=list)

    @property
    def horizon(self) -> float:
        return self.model.horizon


def closed_form_surface(model: ModelSpec, payoff: PayoffSpec, alpha: AlphaLike) -> PricingSurface:
    alpha = as_alpha(alpha)
    if model.kind != "black_scholes":
        raise ValueError("closed form needs a Black-Scholes model")
    if not alpha.is_constant:
        raise ValueError("closed form needs a constant alpha")
    if payoff.kind not in ("call", "put", "s_log_s", "linear"):
        raise ValueError("closed form needs a call, put, s_log_s or linear payoff")
    return PricingSurface(
        kind="closed_form",
        model=model,
        payoff=payoff,
        alpha=alpha,
        v_hat=enlarged_vol(model.v, alpha.value),
    )


def _vol_scale(model: ModelSpec) -> float:
    if model.kind == "black_scholes":
        return float(model.v)
    return float(abs(model.vol_at(np.array([model.s0]), 0.0)[0]) / model.s0)


def _log_grid(model: ModelSpec, payoff: PayoffSpec, alpha: AlphaSpec, n: int) -> np.ndarray:
    a_min = alpha.value if alpha.is_constant else float(np.min(alpha.at(np.array([model.s0]), 0.0)))
    width = max(5.0 * _vol_scale(model) * np.sqrt((1.0 + 2.0 / a_min) * model.horizon), 0.5)
    x0 = np.log(model.s0)
    lo, hi = x0 - width, x0 + width
    dx = (hi - lo) / (n - 1)
    if payoff.kind in ("call", "put"):
        # put the strike on a node
        xk = np.log(payoff.strike)
        shift = (xk - lo) / dx
        lo += (shift - np.floor(shift)) * dx - (dx if shift - np.floor(shift) > 0.5 else 0.0)
    return lo + dx * np.arange(n)


def _stencil(s: np.ndarray):
    """Three-point weights for d^2/ds^2 and d/ds on the (non-uniform) s nodes.

    Both are exact on quadratics in s, so payoffs linear in s carry zero
    discrete gamma; a log-space stencil does not have that property and the
    spurious negative gamma it creates triggers the anti-diffusive branch.
    """
    hm = s[1:-1] - s[:-2]
    hp = s[2:] - s[1:-1]
    w2 = (2.0 / (hm * (hm + hp)), -2.0 / (hm * hp), 2.0 / (hp * (hm + hp)))
    w1 = (-hp / (hm * (hm + hp)), (hp - hm) / (hm * hp), hm / (hp * (hm + hp)))
    return w2, w1


def _gamma_from_values(p: np.ndarray, s: np.ndarray, payoff: PayoffSpec) -> np.ndarray:
    (a, b, c), _ = _stencil(s)
    g = np.empty_like(p)
    g[1:-1] = a * p[:-2] + b * p[1:-1] + c * p[2:]
    g[0] = payoff.curvature(s[0])
    g[-1] = payoff.curvature(s[-1])
    return g


def _delta_from_values(p: np.ndarray, s: np.ndarray) -> np.ndarray:
    _, (a, b, c) = _stencil(s)
    d = np.empty_like(p)
    d[1:-1] = a * p[:-2] + b * p[1:-1] + c * p[2:]
    d[0] = (p[1] - p[0]) / (s[1] - s[0])
    d[-1] = (p[-1] - p[-2]) / (s[-1] - s[-2])
    return d


def _sign(gamma: np.ndarray, previous: np.ndarray) -> np.ndarray:
    """Sign of gamma; inside the dead zone the previous sign is kept."""
    return np.where(np.abs(gamma) < GAMMA_DEAD_ZONE, previous, np.sign(gamma))


def _smoothed_payoff(payoff: PayoffSpec, s: np.ndarray) -> np.ndarray:
    """Payoff with the strike node replaced by its cell average.

    Used only as the datum of the first step; the stored terminal slice
    keeps the exact payoff.
    """
    out = np.asarray(payoff(s), dtype=float).copy()
    if payoff.kind not in ("call", "put"):
        return out
    j = int(np.argmin(np.abs(s - payoff.strike)))
    if 0 < j < len(s) - 1:
        lo, hi = 0.5 * (s[j - 1] + s[j]), 0.5 * (s[j] + s[j + 1])
        u = (np.arange(256) + 0.5) / 256
        out[j] = float(np.mean(payoff(lo + (hi - lo) * u)))
    return out


def solve_nonlinear_pde(
    model: ModelSpec,
    payoff: PayoffSpec,
    alpha: AlphaLike,
    s_nodes: int = 400,
    t_nodes: int = 400,
) -> PricingSurface:
    """Backward Crank-Nicolson solve of the modified pricing equation.

    The sign of gamma in the diffusion coefficient is frozen at the latest
    iterate and the step re-solved until the sign pattern stops changing
    (at most five sweeps). The first steps are split into implicit Euler
    half steps to damp the payoff kink.
    """
    alpha = as_alpha(alpha)
    if s_nodes < 50 or t_nodes < 50:
        raise ValueError("node counts must be at least 50")
    x = _log_grid(model, payoff, alpha, int(s_nodes))
    s = np.exp(x)
    T = model.horizon
    times = np.linspace(0.0, T, int(t_nodes))
    terminal = np.asarray(payoff(s), dtype=float)
    if not np.all(np.isfinite(terminal)):
        raise ValueError("payoff not finite on the grid")

    nt, ns = len(times), len(s)
    P = np.empty((nt, ns))
    P[-1] = terminal
    flagged = []

    (w_lo, w_mid, w_hi), _ = _stencil(s)

    def coeff(t: float, sg: np.ndarray) -> np.ndarray:
        sig = np.asarray(model.vol_at(s, t), dtype=float)
        al = alpha.at(s, t)
        return 0.5 * (1.0 + sg * 2.0 / al) * sig * sig

    def apply_L(k: np.ndarray, p: np.ndarray) -> np.ndarray:
        out = np.zeros_like(p)
        out[1:-1] = k[1:-1] * (w_lo * p[:-2] + w_mid * p[1:-1] + w_hi * p[2:])
        return out

    def boundary_rate(t: float, side: int) -> float:
        # dp/dt at an edge node, with gamma frozen at the payoff curvature
        sb = s[side]
        sig = float(np.asarray(model.vol_at(np.array([sb]), t))[0])
        al = float(alpha.at(np.array([sb]), t)[0])
        fpp = float(payoff.curvature(np.array([sb]))[0])
        return -0.5 * (1.0 + np.sign(fpp) * 2.0 / al) * sig * sig * fpp

    def step(p_next, t_hi, t_lo, theta, sg_hi):
        dt = t_hi - t_lo
        k_hi = coeff(t_hi, sg_hi)
        rhs = p_next + (1.0 - theta) * dt * apply_L(k_hi, p_next)
        rhs[0] = p_next[0] - dt * 0.5 * (boundary_rate(t_hi, 0) + boundary_rate(t_lo, 0))
        rhs[-1] = p_next[-1] - dt * 0.5 * (boundary_rate(t_hi, -1) + boundary_rate(t_lo, -1))
        sg = sg_hi
        for _ in range(MAX_SWEEPS):
            kk = theta * dt * coeff(t_lo, sg)[1:-1]
            ab = np.zeros((3, ns))
            ab[1, 1:-1] = 1.0 - kk * w_mid
            ab[0, 2:] = -kk * w_hi
            ab[2, :-2] = -kk * w_lo
            ab[1, 0] = ab[1, -1] = 1.0  # Dirichlet rows
            p_new = solve_banded((1, 1), ab, rhs)
            sg_new = _sign(_gamma_from_values(p_new, s, payoff), sg)
            if np.array_equal(sg_new, sg):
                return p_new, sg_new, True
            sg = sg_new
        return p_new, sg, False

    def implicit_steps(p_next, t_hi, t_lo, sg_hi, m=2):
        ok = True
        p, sg = p_next, sg_hi
        edges = np.linspace(t_hi, t_lo, m + 1)
        for a, b in zip(edges[:-1], edges[1:]):
            p, sg, ok_i = step(p, a, b, 1.0, sg)
            ok = ok and ok_i
        return p, sg, ok

    def n_negative(p):
        return int(np.sum(_gamma_from_values(p, s, payoff)[1:-1] < -GAMMA_DEAD_ZONE))

    start = _smoothed_payoff(payoff, s)
    sg = _sign(_gamma_from_values(start, s, payoff), np.full(ns, 1.0 if payoff.convex else 0.0))
    p = start
    neg = n_negative(p)
    damped = 0
    for n in range(nt - 2, -1, -1):
        t_hi, t_lo = times[n + 1], times[n]
        if nt - 2 - n < RANNACHER_STEPS:
            # the kink dominates the first steps: implicit substeps damp it
            p_new, sg_new, ok = implicit_steps(p, t_hi, t_lo, sg, FIRST_STEP_SPLIT)
        else:
            p_new, sg_new, ok = step(p, t_hi, t_lo, 0.5, sg)
            if n_negative(p_new) > neg:
                # Crank-Nicolson ringing would flip gamma; damp this level
                p_new, sg_new, ok = implicit_steps(p, t_hi, t_lo, sg)
                damped += 1
        if not np.all(np.isfinite(p_new)):
            raise FloatingPointError(f"non-finite values at time level {n}")
        if not ok:
            flagged.append(n)
        p, sg = p_new, sg_new
        neg = n_negative(p)
        P[n] = p

    if flagged:
        warnings.warn(f"sign pattern unstable at {len(flagged)} time levels", RuntimeWarning)
    D = np.empty_like(P)
    G = np.empty_like(P)
    for n in range(nt):
        D[n] = _delta_from_values(P[n], s)
        G[n] = _gamma_from_values(P[n], s, payoff)
    D[-1] = payoff.slope(s)
    return PricingSurface(
        kind="grid",
        model=model,
        payoff=payoff,
        alpha=alpha,
        s_nodes=s,
        t_nodes=times,
        p=P,
        delta=D,
        gamma=G,
        flagged_levels=flagged,
    )


def _bilinear(surface: PricingSurface, s: np.ndarray, t: np.ndarray, arrays):
    sn, tn = surface.s_nodes, surface.t_nodes
    sc = np.clip(s, sn[0], sn[-1])
    tc = np.clip(t, tn[0], tn[-1])
    clamped = bool(np.any(sc != s) or np.any(tc != t))
    i = np.clip(np.searchsorted(sn, sc, side="right") - 1, 0, len(sn) - 2)
    j = np.clip(np.searchsorted(tn, tc, side="right") - 1, 0, len(tn) - 2)
    ws = (sc - sn[i]) / (sn[i + 1] - sn[i])
    wt = (tc - tn[j]) / (tn[j + 1] - tn[j])
    out = []
    for A in arrays:
        v = (
            (1 - wt) * ((1 - ws) * A[j, i] + ws * A[j, i + 1])
            + wt * ((1 - ws) * A[j + 1, i] + ws * A[j + 1, i + 1])
        )
        out.append(v)
    return out, clamped


def eval_surface(surface: PricingSurface, s, t, with_flag: bool = False):
    """(p, delta, gamma, nu) at (s, t); nu = sigma(s, t) * gamma.

    Grid surfaces are interpolated bilinearly and clamped to the grid hull;
    ``with_flag`` appends a boolean telling whether clamping happened.
    """
    s = np.asarray(s, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), s.shape)
    if surface.kind == "closed_form":
        p, d, g = bs_closed_form(s, t, surface.payoff, surface.v_hat, surface.horizon)
        clamped = False
    else:
        (p, d, g), clamped = _bilinear(surface, s, t, (surface.p, surface.delta, surface.gamma))
        if clamped:
            warnings.warn("surface evaluated outside its grid; values clamped", RuntimeWarning)
    nu = _vol_on(surface.model, s, t) * g
    if with_flag:
        return p, d, g, nu, clamped
    return p, d, g, nu


def _vol_on(model: ModelSpec, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    if model.kind == "black_scholes":
        return model.v * s
    if t.ndim == 0 or np.all(t == t.flat[0]):
        return np.asarray(model.vol_at(s, float(t.flat[0]) if t.size else 0.0), dtype=float)
    return np.array([float(model.vol_at(np.array([si]), ti)[0]) for si, ti in zip(s.ravel(), t.ravel())]).reshape(s.shape)


def dump_surface_csv(surface: PricingSurface, path) -> None:
    """Write (s, t, p, delta, gamma) rows for a grid surface."""
    if surface.kind != "grid":
        raise ValueError("only grid surfaces can be dumped")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "t", "p", "delta", "gamma"])
        for n, t in enumerate(surface.t_nodes):
            for j, s in enumerate(surface.s_nodes):
                w.writerow([format(v, ".17g") for v in (s, t, surface.p[n, j], surface.delta[n, j], surface.gamma[n, j])])
