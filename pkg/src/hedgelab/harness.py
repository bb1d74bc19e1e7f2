"""Monte Carlo experiments: many paths, one strategy, CLT diagnostics."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import asymptotics as asy
from .market_model import ModelSpec, PathAbort, simulate_path
from .pricing import (
    AlphaLike,
    PayoffSpec,
    PricingSurface,
    as_alpha,
    closed_form_surface,
    eval_surface,
    solve_nonlinear_pde,
)
from .strategies import (
    CostSpec,
    StrategySpec,
    check_time_step,
    leland_grid_steps,
    leland_step_size,
    min_a_over_nu,
    required_step,
    run_strategy,
)

MAX_ABORT_FRACTION = 0.01
MIN_CLT_SAMPLES = 100
HITTING_STEPS = 100_000
DRIFT_CONTROL_STEPS = 20_000


@dataclass
class ExperimentConfig:
    model: ModelSpec
    payoff: PayoffSpec
    alpha: AlphaLike
    cost: CostSpec
    strategy: StrategySpec
    n_paths: int = 100
    n_steps: int | None = None  # None: chosen from the strategy's time-scale rule
    seed: int = 0
    pde_nodes: tuple = (400, 400)

    def __post_init__(self):
        self.alpha = as_alpha(self.alpha)
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if self.n_steps is not None and self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")


@dataclass
class ErrorSample:
    path_id: int
    err: float
    q: float
    drift: float
    u_stat: float
    s_T: float
    kappa: float
    floor_hits: int = 0


@dataclass
class ExperimentResult:
    samples: list
    aborted: int
    n_steps: int
    surface: PricingSurface
    flags: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(self.samples)

    def __len__(self):
        return len(self.samples)


@dataclass
class CltReport:
    mean_u: float
    var_u: float
    ks_stat: float
    ks_pvalue: float
    n_effective: int
    corr_u_sT: float
    mean_over_sd: float  # mean(err / kappa) / sd(err / kappa)
    var_ratio: float  # var(err / kappa) / mean(Q)


def build_surface(config: ExperimentConfig) -> PricingSurface:
    """Closed form when available, otherwise the nonlinear PDE grid."""
    try:
        return closed_form_surface(config.model, config.payoff, config.alpha)
    except ValueError:
        ns, nt = config.pde_nodes
        return solve_nonlinear_pde(config.model, config.payoff, config.alpha, ns, nt)


def default_steps(config: ExperimentConfig, surface: PricingSurface | None = None) -> int:
    """Grid size meeting the strategy's resolution requirement."""
    st, T = config.strategy, config.model.horizon
    if st.kind == "leland_equidistant":
        if config.model.kind != "black_scholes":
            raise ValueError("Leland step needs a Black-Scholes model")
        return leland_grid_steps(T, leland_step_size(config.cost.kappa, st.alpha, config.model.v))
    if st.kind == "hitting_time":
        return HITTING_STEPS
    if st.kind == "alpha_to_zero":
        return DRIFT_CONTROL_STEPS
    surface = surface or build_surface(config)
    bound = required_step(config.cost.kappa, min_a_over_nu(surface, config.cost, st))
    return int(np.ceil(T / bound * (1 + 1e-12)))


def _worker_count(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("HEDGELAB_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def _one_path(config: ExperimentConfig, surface: PricingSurface, n_steps: int, index: int):
    try:
        path = simulate_path(config.model, n_steps, config.seed, index)
    except PathAbort:
        return None
    rec = run_strategy(path, surface, config.cost, config.strategy, **(
        {"check_step": False} if config.strategy.kind in ("reflected_control", "optimal_family") else {}
    ))
    if not np.isfinite(rec.err_T):
        return None
    kappa = config.cost.kappa
    u = (rec.err_T - rec.drift_T) / (kappa * np.sqrt(rec.Q_T)) if rec.Q_T > 0 else np.nan
    return ErrorSample(
        path_id=index, err=rec.err_T, q=rec.Q_T, drift=rec.drift_T, u_stat=float(u),
        s_T=float(path.prices[-1]), kappa=kappa, floor_hits=path.floor_hits,
    )


def run_experiment(config: ExperimentConfig, threads: int | None = None) -> ExperimentResult:
    """Run ``config.n_paths`` independent hedges; results are ordered by path index.

    Paths are keyed by (seed, index), so the output does not depend on the
    number of worker threads.
    """
    surface = build_surface(config)
    st = config.strategy
    n_steps = config.n_steps or default_steps(config, surface)
    if st.kind in ("reflected_control", "optimal_family"):
        check_time_step(config.model.horizon / n_steps, surface, config.cost, st)

    workers = _worker_count(threads)
    indices = range(config.n_paths)
    if workers == 1:
        results = [_one_path(config, surface, n_steps, i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda i: _one_path(config, surface, n_steps, i), indices))
    samples = [r for r in results if r is not None]
    aborted = len(results) - len(samples)
    if aborted > MAX_ABORT_FRACTION * config.n_paths:
        raise RuntimeError(f"{aborted} of {config.n_paths} paths aborted")
    flags = {}
    hits = sum(s.floor_hits for s in samples)
    if hits:
        flags["floor_hits"] = hits
    return ExperimentResult(samples=samples, aborted=aborted, n_steps=n_steps, surface=surface, flags=flags)


def clt_diagnostics(samples) -> CltReport:
    """Normality of the renormalized errors (err - drift) / (kappa sqrt(Q))."""
    samples = list(samples)
    eff = [s for s in samples if s.q > 0 and np.isfinite(s.u_stat)]
    if len(eff) < MIN_CLT_SAMPLES:
        raise ValueError(f"need at least {MIN_CLT_SAMPLES} samples with Q > 0, got {len(eff)}")
    u = np.array([s.u_stat for s in eff])
    ks = stats.kstest(u, "norm")
    s_T = np.array([s.s_T for s in eff])
    if np.std(u) > 0 and np.std(s_T) > 0:
        corr = float(np.corrcoef(u, s_T)[0, 1])
    else:
        corr = 0.0
    scaled = np.array([s.err / s.kappa for s in eff])
    sd = float(np.std(scaled, ddof=1))
    return CltReport(
        mean_u=float(np.mean(u)),
        var_u=float(np.var(u, ddof=1)),
        ks_stat=float(ks.statistic),
        ks_pvalue=float(ks.pvalue),
        n_effective=len(eff),
        corr_u_sT=corr,
        mean_over_sd=float(np.mean(scaled) / sd) if sd > 0 else np.inf,
        var_ratio=float(np.var(scaled, ddof=1) / np.mean([s.q for s in eff])),
    )


def u_stats_from_normals(z: np.ndarray, kappa: float = 1.0) -> list:
    """Wrap synthetic draws as samples (self-test of the diagnostics)."""
    return [ErrorSample(i, float(kappa * v), 1.0, 0.0, float(v), 100.0, kappa) for i, v in enumerate(z)]


# ---------------------------------------------------------------------------
# tables

ETA_CHOICES = {
    "leland": asy.eta_leland,
    "fukasawa": asy.eta_fukasawa,
    "dagger": asy.eta_dagger,
    "simple": asy.eta_simple,
}


def initial_wealth(model: ModelSpec, payoff: PayoffSpec, cost: CostSpec, alpha: AlphaLike,
                   pde_nodes: tuple = (400, 400)) -> float:
    """p^alpha(S_0, 0) + kappa lambda(S_0, 0) |X^alpha_0|."""
    cfg = ExperimentConfig(model, payoff, alpha, cost, StrategySpec("hitting_time", alpha=1.0), pde_nodes=pde_nodes)
    surface = build_surface(cfg)
    p, d, _, _ = eval_surface(surface, np.array([model.s0]), 0.0)
    lam = float(cost.lam_at(np.array([model.s0]), 0.0)[0])
    return float(p[0] + cost.kappa * lam * abs(d[0]))


def frontier_scan(model: ModelSpec, payoff: PayoffSpec, cost: CostSpec, alpha_grid, eta: str = "leland"):
    """(alpha, initial wealth, eta(alpha)) along the grid."""
    fn = ETA_CHOICES[eta]
    rows = []
    for a in alpha_grid:
        if not a > 0:
            raise ValueError("alpha grid must be positive")
        rows.append((float(a), initial_wealth(model, payoff, cost, a), float(fn(a))))
    return rows


def eta_comparison_table(alpha_grid) -> list[dict]:
    rows = []
    for a in alpha_grid:
        a = float(a)
        rows.append({
            "alpha": a,
            "eta_L": asy.eta_leland(a),
            "eta_F": asy.eta_fukasawa(a),
            "eta_simple": asy.eta_simple(a),
            "eta_dagger": float(asy.eta_dagger(a)),
        })
    return rows
