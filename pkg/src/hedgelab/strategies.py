"""Hedging strategies under proportional transaction costs.

Every runner consumes one simulated path and a pricing surface and returns a
HedgeRecord with the position, wealth and control paths plus the terminal
error f(S_T) - Pi_T and the path integrals that the limit theory predicts.
The wealth convention is

    Pi_t = Pi_{0-} + int X dS - kappa int lambda d||X||,
    Pi_{0-} = p(S_0, 0) + kappa lambda(S_0, 0) |X_0|,

so the initial purchase is paid out of the extra premium and Pi_0 = p(S_0, 0).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np

from . import asymptotics as asy
from .market_model import PathGrid
from .pricing import PricingSurface, eval_surface, _vol_on

# expected overshoot of a Gaussian random walk over a flat barrier, in units
# of the step standard deviation: -zeta(1/2) / sqrt(2 pi)
OVERSHOOT = 0.5825971579390107
RHO_MAX = 0.05
RAMP_FRACTION = 1e-3
REFL_TOL = 1e-12
CONSTANCY_TOL = 0.01

STRATEGY_KINDS = ("leland_equidistant", "hitting_time", "reflected_control", "optimal_family", "alpha_to_zero")


def _default_lambda(s, t):
    return s


@dataclass(frozen=True)
class CostSpec:
    """Cost kappa * lambda(S, t) per unit traded; lambda defaults to the price."""

    kappa: float
    lam: Callable = _default_lambda
    lambda_is_price: bool = True

    def __post_init__(self):
        if not (self.kappa > 0 and np.isfinite(self.kappa)):
            raise ValueError("kappa must be positive")

    @classmethod
    def proportional(cls, kappa: float) -> "CostSpec":
        return cls(kappa=kappa)

    def lam_at(self, s, t):
        out = np.asarray(self.lam(s, t), dtype=float) * np.ones_like(np.asarray(s, dtype=float))
        if np.any(out < 0):
            raise ValueError("lambda must be nonnegative")
        return out


@dataclass(frozen=True)
class StrategySpec:
    """Tagged strategy description.

    kind: leland_equidistant / hitting_time / alpha_to_zero use ``alpha``;
    reflected_control uses ``b(s, t)`` and optionally ``c(x, s, t)``
    (``b=None`` means the pure band alpha lambda |Gamma| / 2 + eps);
    optimal_family uses ``a(s, t)`` and ``n``.
    """

    kind: str
    alpha: float | None = None
    b: Callable | None = None
    c: Callable | None = None
    a: Callable | None = None
    n: int = 4
    eps: float = 0.0
    continuity_correction: bool = True

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.kind in ("leland_equidistant", "hitting_time", "alpha_to_zero"):
            if self.alpha is None or not self.alpha > 0:
                raise ValueError(f"{self.kind} needs alpha > 0")
        if self.kind == "optimal_family" and (self.a is None or self.n < 2):
            raise ValueError("optimal_family needs a(s, t) and n >= 2")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")


@dataclass
class HedgeRecord:
    times: np.ndarray
    S: np.ndarray
    X: np.ndarray
    Pi: np.ndarray
    tv: np.ndarray
    err_T: float
    Q_T: float
    drift_T: float
    rebalance_count: int
    initial_wealth: float
    kappa: float
    # Z, L, R, band: reflected variants only. Nothing is traded at maturity,
    # so the last entry of Z is the unreflected final deviation.
    Z: np.ndarray | None = None
    L: np.ndarray | None = None
    R: np.ndarray | None = None
    band: np.ndarray | None = None
    costs: np.ndarray | None = None
    flags: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# helpers shared by the runners


def _greeks_on_path(path: PathGrid, surface: PricingSurface):
    p, d, g, nu = eval_surface(surface, path.prices, path.times)
    return np.asarray(p, float), np.asarray(d, float), np.asarray(g, float), np.asarray(nu, float)


def _alpha_on_path(surface: PricingSurface, path: PathGrid) -> np.ndarray:
    if surface.alpha.is_constant:
        return np.full(path.prices.shape, float(surface.alpha.value))
    return np.array([float(surface.alpha.at(s, t)) for s, t in zip(path.prices, path.times)])


def _trapezoid(values: np.ndarray, times: np.ndarray) -> float:
    return float(np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(times)))


def _quadratic_variation_density(path: PathGrid, surface: PricingSurface) -> np.ndarray:
    return _vol_on(surface.model, path.prices, path.times) ** 2


@numba.njit(cache=True, nogil=True)
def _wealth(pi0, X, S, lam, dtv, kappa):
    """Incremental wealth; dtv[i] is the variation traded at node i (i >= 1)."""
    n = S.size
    Pi = np.empty(n)
    Pi[0] = pi0
    for i in range(n - 1):
        Pi[i + 1] = Pi[i] + X[i] * (S[i + 1] - S[i]) - kappa * lam[i + 1] * dtv[i + 1]
    return Pi


def _finish(path, surface, cost, X, dtv, lam, delta0, p0, Q, drift, count, **extra) -> HedgeRecord:
    kappa = cost.kappa
    S = path.prices
    dtv[0] = abs(delta0)
    initial = p0 + kappa * lam[0] * dtv[0]
    Pi = _wealth(p0, X, S, lam, dtv, kappa)
    err = float(surface.payoff(np.array([S[-1]]))[0] - Pi[-1])
    tv = np.cumsum(dtv)
    return HedgeRecord(
        times=path.times, S=S, X=X, Pi=Pi, tv=tv, err_T=err, Q_T=float(Q), drift_T=float(drift),
        rebalance_count=int(count), initial_wealth=float(initial), kappa=kappa,
        costs=kappa * lam * dtv, **extra,
    )


# ---------------------------------------------------------------------------
# Leland: equidistant rebalancing


def leland_step_size(kappa: float, alpha: float, v: float) -> float:
    """Rebalancing interval (2/pi) kappa^2 alpha^2 / v^2."""
    if not (kappa > 0 and alpha > 0 and v > 0):
        raise ValueError("kappa, alpha and v must be positive")
    return (2.0 / np.pi) * kappa * kappa * alpha * alpha / (v * v)


def leland_grid_steps(T: float, h: float, per_interval: int = 10) -> int:
    """Path steps so that multiples of (T / round(T / h)) are grid nodes."""
    return per_interval * max(int(round(T / h)), 1)


def _weighted_curvature_integral(path, surface, cost, gamma) -> float:
    lam = cost.lam_at(path.prices, path.times)
    dqv = _quadratic_variation_density(path, surface)
    return _trapezoid((lam * gamma) ** 2 * dqv, path.times)


def run_leland(path: PathGrid, surface: PricingSurface, cost: CostSpec, alpha: float) -> HedgeRecord:
    """Rebalance to the enlarged-volatility delta at multiples of the Leland step."""
    T = path.times[-1]
    v = surface.model.v if surface.model.kind == "black_scholes" else None
    if v is None:
        raise ValueError("Leland step needs a Black-Scholes volatility")
    h = leland_step_size(cost.kappa, alpha, v)
    flags = {}
    if h > T:
        flags["degenerate"] = "step exceeds horizon: single rebalance"
    n_reb = max(int(round(T / h)), 1)
    dt = path.dt
    if dt > (T / n_reb) / 10.0 * (1 + 1e-9):
        flags["coarse_grid"] = f"path step {dt:.3g} exceeds h/10"
    targets = np.arange(n_reb) * (T / n_reb)
    idx = np.unique(np.rint(targets / dt).astype(np.int64))
    idx = idx[idx < path.n_steps]

    p, d, g, _ = _greeks_on_path(path, surface)
    X = np.empty_like(d)
    marks = np.zeros(d.size, dtype=bool)
    marks[idx] = True
    held = d[0]
    for i in range(d.size):
        if marks[i]:
            held = d[i]
        X[i] = held
    dtv = np.zeros_like(d)
    dtv[1:] = np.abs(np.diff(X))
    lam = cost.lam_at(path.prices, path.times)
    Q = asy.eta_leland(alpha) * _weighted_curvature_integral(path, surface, cost, g)
    rec = _finish(path, surface, cost, X, dtv, lam, d[0], p[0], Q, 0.0, len(idx))
    rec.flags.update(flags)
    return rec


# ---------------------------------------------------------------------------
# hitting times


@numba.njit(cache=True, nogil=True)
def _hitting_kernel(delta, thresh):
    n = delta.size
    X = np.empty(n)
    hits = np.zeros(n, dtype=np.bool_)
    fallback = 0
    X[0] = delta[0]
    anchor = 0
    for i in range(1, n):
        X[i] = X[i - 1]
        if i == n - 1:
            break  # no trading at maturity
        th = thresh[anchor]
        if th <= 0.0:
            X[i] = delta[i]
            hits[i] = True
            anchor = i
            fallback += 1
        elif abs(delta[i] - delta[anchor]) >= th:
            X[i] = delta[i]
            hits[i] = True
            anchor = i
    return X, hits, fallback


def hitting_indices(delta: np.ndarray, thresh: np.ndarray) -> np.ndarray:
    """Nodes where the frozen-threshold rule rebalances (exposed for checks)."""
    _, hits, _ = _hitting_kernel(np.asarray(delta, float), np.asarray(thresh, float))
    return np.flatnonzero(hits)


def run_hitting(path: PathGrid, surface: PricingSurface, cost: CostSpec, alpha: float) -> HedgeRecord:
    """Rebalance when the delta moves by alpha kappa lambda Gamma since the last trade."""
    p, d, g, _ = _greeks_on_path(path, surface)
    lam = cost.lam_at(path.prices, path.times)
    thresh = alpha * cost.kappa * lam * g
    X, hits, fallback = _hitting_kernel(d, thresh)
    dtv = np.zeros_like(d)
    dtv[1:] = np.abs(np.diff(X))
    Q = asy.eta_fukasawa(alpha) * _weighted_curvature_integral(path, surface, cost, g)
    rec = _finish(path, surface, cost, X, dtv, lam, d[0], p[0], Q, 0.0, int(hits.sum()))
    steps = np.abs(np.diff(d))
    mean_step = float(np.mean(steps)) if steps.size else 0.0
    pos = thresh[:-1] > 0
    rec.flags["threshold_to_step"] = float(np.mean(thresh[:-1][pos]) / mean_step) if mean_step > 0 and pos.any() else np.inf
    if fallback:
        rec.flags["nonpositive_threshold"] = int(fallback)
    return rec


# ---------------------------------------------------------------------------
# reflected control


@numba.njit(cache=True, nogil=True)
def _regular_c(x, K, gam, psi, lo, hi, ramp):
    """K / (gam + psi |x|) on [lo, hi) with linear ramps of width ``ramp`` at both ends."""
    ax = abs(x)
    if K == 0.0 or ax < lo - ramp or ax >= hi + ramp:
        return 0.0
    w = 1.0
    if ramp > 0.0:
        if ax < lo + ramp:
            w = min(w, (ax - (lo - ramp)) / (2.0 * ramp))
        if ax > hi - ramp:
            w = min(w, ((hi + ramp) - ax) / (2.0 * ramp))
    w = max(w, 0.0)
    return w * K / (gam + psi * ax)


@numba.njit(cache=True, nogil=True)
def _reflect_kernel(delta, band, nu2, K, gam, psi, lo, hi, ramp, dt, kappa):
    n = delta.size
    Z = np.zeros(n)
    L = np.zeros(n)
    R = np.zeros(n)
    dtv = np.zeros(n)
    z = 0.0
    # no trading at maturity: the last node only records the final deviation
    for i in range(n - 2):
        c = _regular_c(z, K[i], gam[i], psi[i], lo[i], hi[i], ramp[i])
        push = c * nu2[i] * dt / (kappa * kappa)
        if z > 0.0:
            z -= push
        elif z < 0.0:
            z += push
        z += (delta[i + 1] - delta[i]) / kappa
        b = band[i + 1]
        dl = 0.0
        dr = 0.0
        if z > b:
            dr = z - b
            z = b
        elif z < -b:
            dl = -b - z
            z = -b
        Z[i + 1] = z
        L[i + 1] = L[i] + dl
        R[i + 1] = R[i] + dr
        dtv[i + 1] = push * kappa + kappa * (dl + dr)
    if n >= 2:
        Z[n - 1] = Z[n - 2] + (delta[n - 1] - delta[n - 2]) / kappa
        L[n - 1] = L[n - 2]
        R[n - 1] = R[n - 2]
    return Z, L, R, dtv


@dataclass
class BandParameters:
    """Node-wise parameters of a band control along one path."""

    b: np.ndarray
    a: np.ndarray
    K: np.ndarray
    gam: np.ndarray
    psi: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    case: np.ndarray | None = None

    @property
    def regular(self) -> bool:
        return bool(np.any(self.K != 0.0))


def pure_band_parameters(b: np.ndarray) -> BandParameters:
    z = np.zeros_like(b)
    return BandParameters(b=b, a=2.0 * b, K=z, gam=np.ones_like(b), psi=np.ones_like(b), lo=z, hi=z)


def optimal_band_parameters(a: np.ndarray, gamma: np.ndarray, n: int) -> BandParameters:
    case, l, r, psi, K, b = asy.optimal_family_params(a, gamma, n)
    return BandParameters(b=b, a=np.asarray(a, float), K=K, gam=np.where(K != 0, gamma, 1.0), psi=psi, lo=l, hi=r, case=case)


def _band_for(strategy: StrategySpec, surface, cost, path, g):
    """Band parameters along the path for a reflected or optimal-family strategy."""
    lam = cost.lam_at(path.prices, path.times)
    gamma = lam * g
    if strategy.kind == "optimal_family":
        a = np.asarray([strategy.a(s, t) for s, t in zip(path.prices, path.times)], float)
        return optimal_band_parameters(a, gamma, strategy.n)
    if strategy.b is None:
        alpha = _alpha_on_path(surface, path)
        b = 0.5 * alpha * lam * np.abs(g) + strategy.eps
    else:
        b = np.asarray(strategy.b(path.prices, path.times), float) * np.ones_like(path.prices)
    if strategy.c is not None:
        raise NotImplementedError("arbitrary c is only supported through the optimal family")
    return pure_band_parameters(b)


def required_step(kappa: float, a_over_nu: float, rho_max: float = RHO_MAX) -> float:
    """Largest step with Z moving at most rho_max * a / 2 per step (one sd)."""
    return (rho_max * kappa * a_over_nu / 2.0) ** 2


def min_a_over_nu(surface: PricingSurface, cost: CostSpec, strategy: StrategySpec, n_s: int = 41, n_t: int = 21) -> float:
    """min over a sample grid of a(s, t) / |nu(s, t)|, the time-scale driver."""
    model = surface.model
    vs = float(model.v) if model.kind == "black_scholes" else float(abs(model.vol_at(np.array([model.s0]), 0.0)[0]) / model.s0)
    width = 3.0 * vs * np.sqrt(model.horizon)
    s = model.s0 * np.exp(np.linspace(-width, width, n_s))
    t = np.linspace(0.0, model.horizon * (1 - 1.0 / n_t), n_t)
    S, Tm = np.meshgrid(s, t)
    S, Tm = S.ravel(), Tm.ravel()
    _, _, g, nu = eval_surface(surface, S, Tm)
    fake = PathGrid(times=Tm, prices=S, increments=np.zeros(0), seed=0)
    bp = _band_for(strategy, surface, cost, fake, g)
    ok = np.abs(nu) > 0
    if not ok.any():
        return np.inf
    return float(np.min(bp.a[ok] / np.abs(nu[ok])))


def check_time_step(dt: float, surface, cost, strategy, rho_max: float = RHO_MAX) -> float:
    """Raise if ``dt`` is too coarse for the fast variable; returns the bound."""
    bound = required_step(cost.kappa, min_a_over_nu(surface, cost, strategy), rho_max)
    if dt > bound * (1 + 1e-12):
        n_min = int(np.ceil(surface.model.horizon / bound))
        raise ValueError(
            f"time step {dt:.3e} too coarse for the reflected control: need dt <= {bound:.3e} "
            f"(at least {n_min} steps)"
        )
    return bound


def _eta_and_delta(bp: BandParameters, gamma, g, lam, alpha, n: int):
    """eta_{b,c} and delta at every node of ``bp``."""
    if not bp.regular:
        eta = (bp.b + gamma) ** 2 / 3.0
    else:
        eta = np.empty_like(bp.b)
        for i in range(bp.b.size):
            ctrl = asy.optimal_controls(float(bp.a[i]), float(gamma[i]), n)
            eta[i] = asy.derived_densities(ctrl).eta(float(gamma[i]))
    k = np.abs(g)
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(k > 0, lam * k * k / bp.a - k / alpha, 0.0)
    return eta, delta


def run_reflected_control(
    path: PathGrid,
    surface: PricingSurface,
    cost: CostSpec,
    strategy: StrategySpec,
    continuity_correction: bool | None = None,
    check_step: bool = True,
    q_points: int = 200,
) -> HedgeRecord:
    """Hold X = X^alpha - kappa Z with Z reflected at the band +-b.

    Z follows explicit Euler steps driven by the delta increments and the
    regular control; leaving the band is undone by projection, and the
    projected amounts are the increments of L (lower) and R (upper). With
    ``continuity_correction`` the band used by the discrete projection is
    shrunk by the expected Gaussian overshoot so that the discretely
    monitored reflection matches the continuous one to first order.
    """
    if strategy.kind not in ("reflected_control", "optimal_family"):
        raise ValueError("strategy must be reflected_control or optimal_family")
    kappa = cost.kappa
    dt = path.dt
    if check_step:
        check_time_step(dt, surface, cost, strategy)
    p, d, g, nu = _greeks_on_path(path, surface)
    lam = cost.lam_at(path.prices, path.times)
    bp = _band_for(strategy, surface, cost, path, g)
    # the pure band with eps = 0 collapses where Gamma underflows to zero;
    # there nu vanishes too and Z simply stays put
    degenerate = (strategy.kind == "reflected_control" and strategy.b is None) & (g == 0.0)
    if np.any(~(bp.b[:-1] > 0) & ~degenerate[:-1]) or not np.all(np.isfinite(bp.b)):
        raise ValueError("band half-width b must be positive")
    band = bp.b.copy()
    if continuity_correction is None:
        continuity_correction = strategy.continuity_correction
    if continuity_correction:
        band = np.maximum(band - OVERSHOOT * np.abs(nu) * np.sqrt(dt) / kappa, 0.0)
    ramp = RAMP_FRACTION * bp.hi
    Z, L, R, dtv = _reflect_kernel(d, band, nu * nu, bp.K, bp.gam, bp.psi, bp.lo, bp.hi, ramp, dt, kappa)
    X = d - kappa * Z

    alpha = _alpha_on_path(surface, path)
    gamma = lam * g
    dqv = _quadratic_variation_density(path, surface)
    if bp.regular:
        sub = np.unique(np.linspace(0, path.n_steps, min(q_points, path.n_steps) + 1).astype(int))
        eta_s, delta_s = _eta_and_delta(
            BandParameters(*(getattr(bp, f)[sub] for f in ("b", "a", "K", "gam", "psi", "lo", "hi"))),
            gamma[sub], g[sub], lam[sub], alpha[sub], strategy.n,
        )
        Q = _trapezoid(eta_s * dqv[sub], path.times[sub])
        drift = _trapezoid(delta_s * dqv[sub], path.times[sub])
    else:
        eta, delta = _eta_and_delta(bp, gamma, g, lam, alpha, strategy.n)
        Q = _trapezoid(eta * dqv, path.times)
        drift = _trapezoid(delta * dqv, path.times)
    count = int(np.count_nonzero(dtv[1:]))
    rec = _finish(path, surface, cost, X, dtv, lam, d[0], p[0], Q, drift, count, Z=Z, L=L, R=R, band=band)
    if degenerate.any():
        rec.flags["zero_band_nodes"] = int(degenerate.sum())
    return rec


# ---------------------------------------------------------------------------
# the alpha -> 0 drift control


@numba.njit(cache=True, nogil=True)
def _drift_control_kernel(delta, nu2, gamma, coef, kappa, dt):
    n = delta.size
    X = np.empty(n)
    dtv = np.zeros(n)
    X[0] = delta[0]
    # no trading at maturity: the last position repeats the one before
    for i in range(n - 2):
        gap = delta[i] - X[i]
        step = coef * nu2[i] / (kappa * gamma[i] + abs(gap)) * dt
        # the explicit step must not jump across the target
        if step > abs(gap):
            step = abs(gap)
        if gap > 0.0:
            X[i + 1] = X[i] + step
        elif gap < 0.0:
            X[i + 1] = X[i] - step
        else:
            X[i + 1] = X[i]
        dtv[i + 1] = abs(X[i + 1] - X[i])
    if n >= 2:
        X[n - 1] = X[n - 2]
    return X, dtv


def check_constant_nu_gamma(surface: PricingSurface, cost: CostSpec, tol: float = CONSTANCY_TOL) -> tuple[float, float]:
    """(nu, gamma) if both are constant within ``tol`` on a sample grid, else raise."""
    model = surface.model
    if model.kind != "black_scholes" or surface.payoff.kind != "s_log_s" or not cost.lambda_is_price:
        raise ValueError("the alpha -> 0 control needs an s log s payoff, lambda = s and a Black-Scholes model")
    s = model.s0 * np.exp(np.linspace(-1.0, 1.0, 21))
    t = np.linspace(0.0, 0.95 * model.horizon, 11)
    S, Tm = (v.ravel() for v in np.meshgrid(s, t))
    _, _, g, nu = eval_surface(surface, S, Tm)
    gamma = cost.lam_at(S, Tm) * g
    for name, arr in (("nu", nu), ("gamma", gamma)):
        mid = float(np.median(arr))
        if not np.all(np.abs(arr - mid) <= tol * abs(mid)):
            raise ValueError(f"{name} is not constant on the surface")
    return float(np.median(nu)), float(np.median(gamma))


def run_alpha_to_zero(path: PathGrid, surface: PricingSurface, cost: CostSpec, alpha: float) -> HedgeRecord:
    """dX = sgn(X^a - X) ((alpha + 2) / (2 alpha)) nu^2 / (kappa gamma + |X^a - X|) dt."""
    check_constant_nu_gamma(surface, cost)
    p, d, g, nu = _greeks_on_path(path, surface)
    lam = cost.lam_at(path.prices, path.times)
    gamma = lam * g
    coef = (alpha + 2.0) / (2.0 * alpha)
    X, dtv = _drift_control_kernel(d, nu * nu, gamma, coef, cost.kappa, path.dt)
    count = int(np.count_nonzero(dtv[1:]))
    return _finish(path, surface, cost, X, dtv, lam, d[0], p[0], 0.0, 0.0, count)


# ---------------------------------------------------------------------------
# bookkeeping views


def run_strategy(path: PathGrid, surface: PricingSurface, cost: CostSpec, strategy: StrategySpec, **kw) -> HedgeRecord:
    if strategy.kind == "leland_equidistant":
        return run_leland(path, surface, cost, strategy.alpha)
    if strategy.kind == "hitting_time":
        return run_hitting(path, surface, cost, strategy.alpha)
    if strategy.kind == "alpha_to_zero":
        return run_alpha_to_zero(path, surface, cost, strategy.alpha)
    return run_reflected_control(path, surface, cost, strategy, **kw)


def tracking_error_series(record: HedgeRecord, surface: PricingSurface, alpha=None) -> np.ndarray:
    """Pi^alpha_t - Pi_t at every node, with Pi^alpha_t = p^alpha(S_t, t)."""
    p = np.asarray(eval_surface(surface, record.S, record.times)[0], float)
    return p - record.Pi


def tracking_error_terms(record: HedgeRecord, surface: PricingSurface, alpha=None):
    """The three running integrals whose sum is the tracking error:

    int (X^alpha - X) dS, kappa int lambda d||X|| and -int |Gamma| / alpha d<S>.
    The first is taken left-point and the last by the trapezoid rule, so the
    sum matches ``tracking_error_series`` only up to time discretization.
    """
    path = PathGrid(times=record.times, prices=record.S, increments=np.zeros(0), seed=0)
    _, d, g, _ = _greeks_on_path(path, surface)
    if alpha is None:
        alpha_v = _alpha_on_path(surface, path)
    elif np.isscalar(alpha):
        alpha_v = np.full(record.S.shape, float(alpha))
    else:
        alpha_v = np.array([float(alpha.at(s, t)) for s, t in zip(record.S, record.times)])
    dqv = _quadratic_variation_density(path, surface)
    dens = np.abs(g) / alpha_v * dqv
    zero = np.zeros(1)
    deviation = np.concatenate([zero, np.cumsum((d - record.X)[:-1] * np.diff(record.S))])
    cost = np.concatenate([zero, np.cumsum(record.costs[1:])])
    surplus = -np.concatenate([zero, np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(record.times))])
    return deviation, cost, surplus


def wealth_closed_form(record: HedgeRecord) -> float:
    """Pi_T in one vectorized pass, independent of the incremental recursion."""
    return float(record.initial_wealth + np.dot(record.X[:-1], np.diff(record.S)) - np.sum(record.costs))


def lipschitz_spot_check(c: Callable, b: float, n: int = 1000, seed: int = 0) -> float:
    """Empirical constant K in (x - y)(-sgn(x)c(x) + sgn(y)c(y)) <= K |x - y|^2.

    Returns the largest ratio seen over ``n`` random pairs in [-b, b]; a very
    large value suggests the one-sided condition fails. Only warns.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(-b, b, n)
    y = rng.uniform(-b, b, n)
    keep = x != y
    x, y = x[keep], y[keep]
    lhs = (x - y) * (-np.sign(x) * c(np.abs(x)) + np.sign(y) * c(np.abs(y)))
    ratio = float(np.max(lhs / (x - y) ** 2))
    if ratio > 1e6 / max(b * b, 1e-300):
        warnings.warn(f"one-sided Lipschitz constant looks unbounded ({ratio:.3g})", RuntimeWarning)
    return ratio


def record_rows(record: HedgeRecord):
    """(t, S, X, Pi, Z, L, R, tv) rows for CSV output."""
    n = record.S.size
    zeros = np.zeros(n)
    Z = record.Z if record.Z is not None else zeros
    L = record.L if record.L is not None else zeros
    R = record.R if record.R is not None else zeros
    return np.column_stack([record.times, record.S, record.X, record.Pi, Z, L, R, record.tv])
