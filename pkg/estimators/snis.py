"""
Self-normalized importance sampling estimators of the posterior mean

    mu_hat = sum_i w_bar_i x_i,   w_i = p_t(z | x_i) / q(x_i)

Log weights are constant-free; the Gaussian normalizer and p_data cancel
under self-normalization.
"""
from typing import Optional

import numpy as np

from db.store import DatasetStore
from diffusion.oracle import exact_posterior
from diffusion.schedules import DiffusionSchedule
from errors import ArgumentError, check_time
from index.base import BaseIndex
from .base import BaseEstimator, EstimatorSpec, ScoreEstimate, make_estimate, weighted_mean
from .proposals import BaseProposal, UniformProposal, build_knn_proposal


def snis_estimate(
    data: DatasetStore,
    schedule: DiffusionSchedule,
    z: np.ndarray,
    t: float,
    proposal: BaseProposal,
    n: int,
    rng: np.random.Generator,
) -> ScoreEstimate:
    """
    SNIS posterior mean and score with n i.i.d. draws from `proposal`.

    Args:
        data: Dataset
        schedule: Diffusion schedule
        z: Noisy observation
        t: Diffusion time
        proposal: UniformProposal or KnnProposal built at (z, t)
        n: Batch size
        rng: Random stream

    Returns:
        ScoreEstimate
    """
    t = check_time(t)
    if n < 1:
        raise ArgumentError(f"n must be >= 1, got {n}")
    indices, log_lik, log_q = proposal.draw(n, rng)
    mean, ess, _ = weighted_mean(data.points, indices, log_lik - log_q)
    return make_estimate(schedule, z, t, mean, ess, n)


def stf_estimate(
    data: DatasetStore,
    schedule: DiffusionSchedule,
    x_ref: int,
    z: np.ndarray,
    t: float,
    n: int,
    rng: np.random.Generator,
) -> ScoreEstimate:
    """
    Uniform-proposal SNIS that always includes the generating atom.

    The batch is x_ref plus n - 1 uniform draws with replacement; every
    member is weighted as if drawn from q = 1/N, so the deterministic
    inclusion is not corrected for.
    """
    t = check_time(t)
    if n < 2:
        raise ArgumentError(f"stf needs n >= 2, got {n}")
    if not 0 <= int(x_ref) < data.n:
        raise ArgumentError(f"x_ref {x_ref} is not a dataset index")
    proposal = UniformProposal(data, schedule, z, t)
    drawn = rng.integers(data.n, size=n - 1)
    indices = np.concatenate([[int(x_ref)], drawn]).astype(np.int64)
    log_lik = proposal.point_log_lik(indices)
    mean, ess, _ = weighted_mean(data.points, indices, log_lik)
    return make_estimate(schedule, z, t, mean, ess, n)


def importance_estimate(
    data: DatasetStore,
    schedule: DiffusionSchedule,
    z: np.ndarray,
    t: float,
    proposal: BaseProposal,
    n: int,
    rng: np.random.Generator,
) -> ScoreEstimate:
    """
    Plain importance sampling with the exact marginal as normalizer.

        mu_hat = (1 / n) sum_i p_t(x_i | z) / q(x_i) * x_i

    Needs the O(N) marginal, so it is a reference baseline only.
    """
    t = check_time(t)
    if n < 1:
        raise ArgumentError(f"n must be >= 1, got {n}")
    log_P = exact_posterior(data, schedule, z, t).log_P
    indices, log_lik, log_q = proposal.draw(n, rng)
    ratio = np.exp(log_lik - log_P - log_q)
    mean = ratio @ data.points[indices] / n
    w_bar = ratio / ratio.sum() if ratio.sum() > 0 else np.full(n, 1.0 / n)
    ess = 1.0 / float(np.sum(w_bar * w_bar))
    return make_estimate(schedule, z, t, mean, ess, n)


class UniformSNISEstimator(BaseEstimator):
    """SNIS with q = 1/N"""

    def estimate(self, z, t, rng, x_ref: Optional[int] = None) -> ScoreEstimate:
        proposal = UniformProposal(self.data, self.schedule, z, t)
        estimate = snis_estimate(self.data, self.schedule, z, t, proposal, self.spec.n, rng)
        self.check_ess(estimate)
        return estimate


class KnnSNISEstimator(BaseEstimator):
    """SNIS with the truncated nearest neighbour proposal"""

    def __init__(self, data: DatasetStore, schedule: DiffusionSchedule, spec: EstimatorSpec, index: BaseIndex):
        super().__init__(data, schedule, spec)
        self.index = index
        self.k = min(spec.k, data.n)
        if self.k < spec.k:
            self.logger.info(f"Clamping k={spec.k} to N={data.n}")

    def estimate(self, z, t, rng, x_ref: Optional[int] = None) -> ScoreEstimate:
        proposal = build_knn_proposal(self.index, self.data, self.schedule, z, t, self.k)
        estimate = snis_estimate(self.data, self.schedule, z, t, proposal, self.spec.n, rng)
        self.check_ess(estimate)
        return estimate


class STFEstimator(BaseEstimator):
    """Uniform SNIS with deterministic inclusion of the generating atom"""

    def estimate(self, z, t, rng, x_ref: Optional[int] = None) -> ScoreEstimate:
        if x_ref is None:
            raise ArgumentError("stf needs the index of the generating point")
        return stf_estimate(self.data, self.schedule, x_ref, z, t, self.spec.n, rng)


class ImportanceEstimator(BaseEstimator):
    """Plain IS with the KNN proposal and the exact marginal"""

    def __init__(self, data: DatasetStore, schedule: DiffusionSchedule, spec: EstimatorSpec, index: BaseIndex):
        super().__init__(data, schedule, spec)
        self.index = index
        self.k = min(spec.k, data.n)

    def estimate(self, z, t, rng, x_ref: Optional[int] = None) -> ScoreEstimate:
        proposal = build_knn_proposal(self.index, self.data, self.schedule, z, t, self.k)
        return importance_estimate(self.data, self.schedule, z, t, proposal, self.spec.n, rng)
