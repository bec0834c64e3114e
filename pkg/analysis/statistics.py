"""
Statistics helpers: two-sample energy distance permutation test,
convergence order fits and standard errors.
"""
from typing import Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist, squareform

from errors import ArgumentError, DimensionError


def _energy_from_blocks(D: np.ndarray, ix: np.ndarray, iy: np.ndarray) -> float:
    # V-statistic form: 2 E|X-Y| - E|X-X'| - E|Y-Y'|
    dxy = D[np.ix_(ix, iy)].mean()
    dxx = D[np.ix_(ix, ix)].mean()
    dyy = D[np.ix_(iy, iy)].mean()
    return float(2.0 * dxy - dxx - dyy)


def energy_distance(X: np.ndarray, Y: np.ndarray) -> float:
    """Energy distance between two samples (V-statistic)"""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise DimensionError(f"samples have dimensions {X.shape[1]} and {Y.shape[1]}")
    D = squareform(pdist(np.vstack([X, Y])))
    nx = X.shape[0]
    return _energy_from_blocks(D, np.arange(nx), np.arange(nx, D.shape[0]))


def energy_test(X: np.ndarray, Y: np.ndarray, n_perm: int = 1000, seed: int = 0) -> Tuple[float, float]:
    """
    Two-sample energy distance permutation test (any dimension).

    Args:
        X: (nx, d) first sample
        Y: (ny, d) second sample
        n_perm: Number of label permutations
        seed: Seed of the permutation stream

    Returns:
        Tuple of (statistic, p-value)
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise DimensionError(f"samples have dimensions {X.shape[1]} and {Y.shape[1]}")
    if n_perm < 1:
        raise ArgumentError(f"n_perm must be >= 1, got {n_perm}")
    rng = np.random.default_rng(seed)
    nx = X.shape[0]
    D = squareform(pdist(np.vstack([X, Y])))
    total = D.shape[0]

    observed = _energy_from_blocks(D, np.arange(nx), np.arange(nx, total))
    labels = np.arange(total)
    exceed = 0
    for _ in range(n_perm):
        rng.shuffle(labels)
        if _energy_from_blocks(D, labels[:nx], labels[nx:]) >= observed:
            exceed += 1
    return observed, (exceed + 1) / (n_perm + 1)


def convergence_order(steps: Sequence[int], errors: Sequence[float]) -> float:
    """
    Empirical order p of err ~ C * steps^-p by least squares in log-log space.

    Args:
        steps: Step counts
        errors: Errors at those step counts (positive)

    Returns:
        Estimated order p
    """
    steps = np.asarray(steps, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    if steps.shape != errors.shape or steps.size < 2:
        raise ArgumentError("need at least two (steps, error) pairs")
    if np.any(errors <= 0.0):
        raise ArgumentError("errors must be positive to fit an order")
    slope, _ = np.polyfit(np.log(steps), np.log(errors), 1)
    return float(-slope)


def standard_error(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        return float("nan")
    return float(np.std(x, ddof=1, axis=0).mean() / np.sqrt(x.shape[0]))
