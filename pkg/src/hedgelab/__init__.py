"""Hedging under small proportional transaction costs: pricing, strategies,
asymptotic variance coefficients and Monte Carlo checks."""

__version__ = "0.1.0"
