"""
Exact brute-force quantities over all N dataset points

These are the ground truth for every estimator and bound. All sums run in
the log domain with max subtraction; probabilities are materialised only
after normalization, since unnormalized likelihoods underflow at small t.
"""
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import logsumexp

from db.store import DatasetStore
from errors import ArgumentError, DimensionError, UnsupportedProposalError, check_time
from .schedules import DiffusionSchedule, score_from_mean


class Target(Enum):
    """Quantity whose estimator covariance is requested"""
    MEAN = "mean"
    SCORE = "score"


@dataclass(frozen=True, eq=False)
class ExactPosterior:
    """Posterior over dataset atoms given a noisy observation"""
    log_probs: np.ndarray  # (N,), normalized
    log_P: float  # log sum_i p_t(z | x_i), constant-free

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)


def _query(data: DatasetStore, schedule: DiffusionSchedule, z: np.ndarray, t: float) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.shape[0] != data.dim:
        raise DimensionError(f"z has dimension {z.shape[0]}, dataset has {data.dim}")
    return z / schedule.scale(t)


def log_likelihoods(data: DatasetStore, schedule: DiffusionSchedule, z: np.ndarray, t: float) -> np.ndarray:
    """Constant-free log p_t(z | x_i) for every dataset row"""
    t = check_time(t)
    query = _query(data, schedule, z, t)
    sig = schedule.sigma(t)
    diff = data.points - query
    return -np.einsum("ij,ij->i", diff, diff) / (2.0 * sig * sig)


def exact_posterior(data: DatasetStore, schedule: DiffusionSchedule, z: np.ndarray, t: float) -> ExactPosterior:
    """
    Posterior p_t(x_i | z) over all atoms (p_data = 1/N cancels).

    Args:
        data: Dataset
        schedule: Diffusion schedule
        z: Noisy observation
        t: Diffusion time

    Returns:
        ExactPosterior with normalized log probabilities
    """
    log_lik = log_likelihoods(data, schedule, z, t)
    log_P = float(logsumexp(log_lik))
    return ExactPosterior(log_probs=log_lik - log_P, log_P=log_P)


def log_marginal(data: DatasetStore, schedule: DiffusionSchedule, z: np.ndarray, t: float) -> float:
    """log sum_i p_t(z | x_i), constant-free"""
    return exact_posterior(data, schedule, z, t).log_P


def exact_posterior_mean(data: DatasetStore, schedule: DiffusionSchedule, z: np.ndarray, t: float) -> np.ndarray:
    """Posterior mean E[x | z, t], the optimal denoiser"""
    probs = exact_posterior(data, schedule, z, t).probs
    return probs @ data.points


def exact_score(data: DatasetStore, schedule: DiffusionSchedule, z: np.ndarray, t: float) -> np.ndarray:
    """Marginal score (mu - z / s(t)) / sigma(t)^2"""
    mean = exact_posterior_mean(data, schedule, z, t)
    return score_from_mean(schedule, mean, np.asarray(z, dtype=np.float64), t)


def posterior_variance_diag(data: DatasetStore, schedule: DiffusionSchedule, z: np.ndarray, t: float) -> np.ndarray:
    """Per-dimension posterior variance sum_i p_i (x_i - mu)^2"""
    probs = exact_posterior(data, schedule, z, t).probs
    dev = data.points - probs @ data.points
    return probs @ (dev * dev)


def snis_covariance_diag(
    data: DatasetStore,
    schedule: DiffusionSchedule,
    z: np.ndarray,
    t: float,
    proposal_log_probs: np.ndarray,
    n: int,
    target: Target = Target.MEAN,
) -> np.ndarray:
    """
    Analytic diagonal of the SNIS estimator covariance.

        (1 / n) sum_i p_t(x_i | z)^2 / q(x_i) * (x_i - mu)^2

    divided additionally by sigma(t)^4 for the score target.

    Args:
        data: Dataset
        schedule: Diffusion schedule
        z: Noisy observation
        t: Diffusion time
        proposal_log_probs: (N,) normalized log proposal over atoms
        n: Batch size
        target: Mean or Score

    Returns:
        (d,) covariance diagonal
    """
    if n < 1:
        raise ArgumentError(f"n must be >= 1, got {n}")
    log_q = np.asarray(proposal_log_probs, dtype=np.float64).reshape(-1)
    if log_q.shape[0] != data.n:
        raise DimensionError(f"proposal has {log_q.shape[0]} atoms, dataset has {data.n}")
    total = float(logsumexp(log_q))
    if abs(total) > 1e-9:
        raise ArgumentError(f"proposal is not normalized (logsumexp = {total:.3e})")

    posterior = exact_posterior(data, schedule, z, t)
    log_p = posterior.log_probs
    # atoms with p = 0 contribute nothing, even where q = 0
    support = posterior.probs > 0.0
    if np.any(support & ~np.isfinite(log_q)):
        bad = int(np.flatnonzero(support & ~np.isfinite(log_q))[0])
        raise UnsupportedProposalError(f"proposal has zero mass on atom {bad} where the posterior is positive")

    ratio = np.zeros(data.n)
    ratio[support] = np.exp(2.0 * log_p[support] - log_q[support])
    mean = posterior.probs @ data.points
    dev = data.points - mean
    diag = ratio @ (dev * dev) / n
    if target is Target.SCORE:
        sig = schedule.sigma(t)
        diag = diag / sig ** 4
    return diag


def uniform_trace(data: DatasetStore, schedule: DiffusionSchedule, z: np.ndarray, t: float, n: int) -> float:
    """
    Trace of the uniform-proposal SNIS covariance (mean target):

        (N / n) sum_i p_t(x_i | z)^2 ||x_i - mu||^2
    """
    if n < 1:
        raise ArgumentError(f"n must be >= 1, got {n}")
    probs = exact_posterior(data, schedule, z, t).probs
    dev = data.points - probs @ data.points
    return float(data.n / n * np.sum(probs * probs * np.einsum("ij,ij->i", dev, dev)))


def uniform_log_probs(data: DatasetStore) -> np.ndarray:
    """Normalized log proposal of the uniform distribution over atoms"""
    return np.full(data.n, -math.log(data.n))


def optimal_denoiser_check(
    data: DatasetStore,
    schedule: DiffusionSchedule,
    z: np.ndarray,
    t: float,
    candidate: np.ndarray,
) -> float:
    """
    Denoising objective E_{x ~ posterior} ||candidate - x||^2.

    Minimised by the exact posterior mean; any other candidate mu + v
    exceeds the minimum by exactly ||v||^2.
    """
    candidate = np.asarray(candidate, dtype=np.float64).reshape(-1)
    if candidate.shape[0] != data.dim:
        raise DimensionError(f"candidate has dimension {candidate.shape[0]}, dataset has {data.dim}")
    probs = exact_posterior(data, schedule, z, t).probs
    diff = data.points - candidate
    return float(probs @ np.einsum("ij,ij->i", diff, diff))
