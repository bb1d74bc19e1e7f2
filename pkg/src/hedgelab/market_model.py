"""Local-volatility price paths on a uniform time grid."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

Drift = Union[float, Callable[[np.ndarray, float], np.ndarray]]
VolFn = Callable[[np.ndarray, float], np.ndarray]

FLOOR_FRACTION = 1e-8


class PathAbort(RuntimeError):
    """A simulated path produced a non-finite price."""


@dataclass(frozen=True)
class ModelSpec:
    """Dynamics dS = drift(S, t) dt + vol(S, t) dB on [0, horizon].

    ``kind`` is ``"black_scholes"`` (vol = v s, drift = mu s) or ``"general"``.
    For Black-Scholes the drift is stored both as the callable and as ``mu``
    so that the exact log-normal step can be used.
    """

    s0: float
    horizon: float
    drift: Drift
    vol: VolFn
    kind: str = "general"
    v: float | None = None
    mu: float | None = None

    def __post_init__(self):
        if not (self.s0 > 0 and np.isfinite(self.s0)):
            raise ValueError("s0 must be positive")
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise ValueError("horizon must be positive")
        if self.kind not in ("black_scholes", "general"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "black_scholes" and not (self.v is not None and self.v > 0):
            raise ValueError("black_scholes requires v > 0")

    @classmethod
    def black_scholes(cls, s0: float, horizon: float, v: float, mu: float = 0.0) -> "ModelSpec":
        if not v > 0:
            raise ValueError("black_scholes requires v > 0")
        return cls(
            s0=s0,
            horizon=horizon,
            drift=lambda s, t, _mu=mu: _mu * s,
            vol=lambda s, t, _v=v: _v * s,
            kind="black_scholes",
            v=float(v),
            mu=float(mu),
        )

    @classmethod
    def cev(cls, s0: float, horizon: float, v: float, beta: float, mu: float = 0.0) -> "ModelSpec":
        """vol(s) = v s0 (s/s0)^beta, a simple local-volatility example."""
        return cls(
            s0=s0,
            horizon=horizon,
            drift=lambda s, t, _mu=mu: _mu * s,
            vol=lambda s, t, _v=v, _b=beta, _s0=s0: _v * _s0 * (np.maximum(s, 0.0) / _s0) ** _b,
            kind="general",
            mu=float(mu),
        )

    def drift_at(self, s, t: float):
        if callable(self.drift):
            return self.drift(s, t)
        return np.full_like(np.asarray(s, dtype=float), float(self.drift))

    def vol_at(self, s, t: float):
        return self.vol(s, t)


@dataclass
class PathGrid:
    times: np.ndarray
    prices: np.ndarray
    increments: np.ndarray
    seed: int
    floor_hits: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1


def path_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Generator keyed by (experiment seed, path index); independent of schedule."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), int(index)]))


def simulate_path(
    model: ModelSpec,
    n_steps: int,
    seed: int,
    path_index: int = 0,
) -> PathGrid:
    """Simulate one path with ``n_steps`` equal steps.

    Black-Scholes paths use exact log-normal steps; anything else uses
    Euler-Maruyama with reflection at a positive floor.
    """
    n_steps = int(n_steps)
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    T = model.horizon
    times = np.linspace(0.0, T, n_steps + 1)
    dt = T / n_steps
    rng = path_rng(seed, path_index)
    dB = rng.standard_normal(n_steps) * np.sqrt(dt)

    if model.kind == "black_scholes" and model.mu is not None:
        v, mu = model.v, model.mu
        logs = np.empty(n_steps + 1)
        logs[0] = 0.0
        np.cumsum((mu - 0.5 * v * v) * dt + v * dB, out=logs[1:])
        prices = model.s0 * np.exp(logs)
        hits = 0
    else:
        prices, hits = _euler(model, times, dB)

    if not np.all(np.isfinite(prices)):
        bad = int(np.argmin(np.isfinite(prices)))
        raise PathAbort(f"non-finite price at step {bad} (seed={seed}, path={path_index})")
    return PathGrid(times=times, prices=prices, increments=dB, seed=int(seed), floor_hits=hits)


def _euler(model: ModelSpec, times: np.ndarray, dB: np.ndarray) -> tuple[np.ndarray, int]:
    floor = FLOOR_FRACTION * model.s0
    prices = np.empty(len(times))
    prices[0] = model.s0
    s = model.s0
    hits = 0
    for i in range(len(dB)):
        t = times[i]
        dt = times[i + 1] - t
        s = s + float(model.drift_at(s, t)) * dt + float(model.vol_at(s, t)) * dB[i]
        if s < floor:
            s = 2.0 * floor - s
            hits += 1
            if s < floor:
                s = floor
        prices[i + 1] = s
    return prices, hits
