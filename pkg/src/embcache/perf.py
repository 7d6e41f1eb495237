"""Latency-vs-hit-rate modeling for end-to-end serving estimates.

Inference latency at a fixed batch size is close to linear in the buffer hit
rate: hits cost fast-memory time, misses cost slow-memory time.  ``fit``
recovers that line from observed (hit_rate, latency_ms) points by ordinary
least squares; ``estimate`` evaluates it, floored at zero.  A synthetic
per-access cost model generates observation points when no hardware
measurements exist.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFitError, InvalidConfigError

HIT_COST_US = 0.1
MISS_COST_US = 10.0


@dataclass
class PerfModel:
    intercept: float   # latency at hit rate 0, in ms
    slope: float       # ms per unit hit rate (negative when hits are cheaper)
    fit_rmse: float
    n_points: int

    def __str__(self):
        return (f"latency_ms = {self.intercept:.4f} + {self.slope:.4f} * hit_rate "
                f"(rmse {self.fit_rmse:.4f}, n={self.n_points})")


def fit(points: list[tuple[float, float]]) -> PerfModel:
    """Least-squares line through (hit_rate, latency_ms) observations."""
    if len(points) < 2:
        raise DegenerateFitError("need at least two observation points")
    h = np.asarray([p[0] for p in points], dtype=np.float64)
    t = np.asarray([p[1] for p in points], dtype=np.float64)
    if np.ptp(h) == 0.0:
        raise DegenerateFitError("all observations share one hit rate")
    h_mean, t_mean = h.mean(), t.mean()
    slope = float(((h - h_mean) * (t - t_mean)).sum() / ((h - h_mean) ** 2).sum())
    intercept = float(t_mean - slope * h_mean)
    residuals = t - (intercept + slope * h)
    rmse = float(np.sqrt(np.mean(residuals ** 2)))
    return PerfModel(intercept, slope, rmse, len(points))


def estimate(model: PerfModel, hit_rate: float) -> float:
    """Predicted latency in ms, floored at zero."""
    if not 0.0 <= hit_rate <= 1.0:
        raise InvalidConfigError(f"hit rate {hit_rate} outside [0, 1]")
    return max(0.0, model.intercept + model.slope * hit_rate)


def synthetic_latency_ms(hit_rate: float, n_accesses: int,
                         hit_cost_us: float = HIT_COST_US,
                         miss_cost_us: float = MISS_COST_US) -> float:
    """Cost-model latency of serving ``n_accesses`` at a given hit rate."""
    if not 0.0 <= hit_rate <= 1.0:
        raise InvalidConfigError(f"hit rate {hit_rate} outside [0, 1]")
    per_access_us = hit_rate * hit_cost_us + (1.0 - hit_rate) * miss_cost_us
    return n_accesses * per_access_us / 1000.0


def synthetic_points(hit_rates, n_accesses: int, hit_cost_us: float = HIT_COST_US,
                     miss_cost_us: float = MISS_COST_US,
                     noise_sigma_ms: float = 0.0,
                     seed: int = 0) -> list[tuple[float, float]]:
    """Observation points from the cost model, optionally with Gaussian noise."""
    rng = np.random.default_rng(seed)
    out = []
    for h in hit_rates:
        t = synthetic_latency_ms(float(h), n_accesses, hit_cost_us, miss_cost_us)
        if noise_sigma_ms > 0.0:
            t += float(rng.normal(0.0, noise_sigma_ms))
        out.append((float(h), t))
    return out
