"""
Monte Carlo baselines: the single-sample estimator, multi-sample posterior
Monte Carlo (full O(N) posterior per call) and the exact oracle wrapped as
an estimator.
"""
from typing import Optional

import numpy as np

from db.store import DatasetStore
from diffusion.oracle import exact_posterior, exact_posterior_mean
from diffusion.schedules import DiffusionSchedule
from errors import ArgumentError, DimensionError, check_time
from .base import BaseEstimator, ScoreEstimate, make_estimate, weighted_mean


def mc_single(
    data: DatasetStore,
    schedule: DiffusionSchedule,
    x_ref: np.ndarray,
    z: np.ndarray,
    t: float,
) -> ScoreEstimate:
    """Single-sample estimator: the generating point is the mean estimate"""
    t = check_time(t)
    x_ref = np.asarray(x_ref, dtype=np.float64).reshape(-1)
    if x_ref.shape[0] != np.asarray(z).reshape(-1).shape[0]:
        raise DimensionError("x_ref and z dimensions differ")
    return make_estimate(schedule, z, t, x_ref.copy(), 1.0, 1)


def draw_posterior(
    data: DatasetStore,
    schedule: DiffusionSchedule,
    z: np.ndarray,
    t: float,
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Draw n atom indices from the exact posterior.

    Inverse CDF over atoms sorted by decreasing probability (ties by index).
    """
    probs = exact_posterior(data, schedule, z, t).probs
    order = np.lexsort((np.arange(data.n), -probs))
    cdf = np.cumsum(probs[order])
    pos = np.searchsorted(cdf, rng.random(n), side="right")
    last = int(np.flatnonzero(probs[order] > 0.0)[-1])
    return order[np.minimum(pos, last)]


def mc_posterior(
    data: DatasetStore,
    schedule: DiffusionSchedule,
    z: np.ndarray,
    t: float,
    n: int,
    rng: np.random.Generator,
) -> ScoreEstimate:
    """Average of n exact posterior draws"""
    t = check_time(t)
    if n < 1:
        raise ArgumentError(f"n must be >= 1, got {n}")
    indices = draw_posterior(data, schedule, z, t, n, rng)
    mean, _, _ = weighted_mean(data.points, indices, np.zeros(n))
    return make_estimate(schedule, z, t, mean, n, n)


class ExactEstimator(BaseEstimator):
    """The brute-force posterior mean, evaluated as if it were an estimator"""

    def estimate(self, z, t, rng, x_ref: Optional[int] = None) -> ScoreEstimate:
        mean = exact_posterior_mean(self.data, self.schedule, z, t)
        return make_estimate(self.schedule, z, t, mean, 1.0, 1)


class SingleSampleEstimator(BaseEstimator):
    """
    Single-sample estimator under joint-sample semantics.

    Given z, the point that generated it is distributed as the posterior,
    so each evaluation draws a fresh generating point from the posterior.
    """

    def estimate(self, z, t, rng, x_ref: Optional[int] = None) -> ScoreEstimate:
        drawn = int(draw_posterior(self.data, self.schedule, z, t, 1, rng)[0])
        return mc_single(self.data, self.schedule, self.data.points[drawn], z, t)


class PosteriorMCEstimator(BaseEstimator):
    """Multi-sample posterior Monte Carlo"""

    def estimate(self, z, t, rng, x_ref: Optional[int] = None) -> ScoreEstimate:
        return mc_posterior(self.data, self.schedule, z, t, self.spec.n, rng)
