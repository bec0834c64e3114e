"""
Importance sampling proposals over dataset atoms

KnnProposal is the truncated nearest neighbour proposal: exact forward
likelihoods on the k nearest atoms of z / s(t), and a flat tail at the k-th
likelihood shared by the remaining N - k atoms:

    Z_q * q(x_i) = p_t(z | x_i)   for x_i in K
    Z_q * q(x_i) = p_t(z | x_k)   otherwise
    Z_q = sum_{j in K} p_t(z | x_j) + (N - k) p_t(z | x_k)

The tail is one lumped atom for sampling; a tail draw is then uniform over
the atoms outside K.
"""
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import logsumexp

from config import TAIL_REJECTION_WARN
from db.store import DatasetStore
from diffusion.oracle import exact_posterior
from diffusion.schedules import DiffusionSchedule
from errors import ArgumentError, check_time
from index.base import BaseIndex

logger = logging.getLogger(__name__)


class BaseProposal(ABC):
    """A proposal q(x_i | z) over the atoms of a dataset at fixed (z, t)"""

    def __init__(self, data: DatasetStore, schedule: DiffusionSchedule, z: np.ndarray, t: float):
        self.data = data
        self.schedule = schedule
        self.z = np.asarray(z, dtype=np.float64).reshape(-1)
        self.t = check_time(t)
        self.query = self.z / schedule.scale(self.t)
        self.sigma = schedule.sigma(self.t)

    def point_log_lik(self, indices: np.ndarray) -> np.ndarray:
        """Constant-free log p_t(z | x_i) computed from the rows themselves"""
        diff = self.data.points[indices] - self.query
        return -np.einsum("ij,ij->i", diff, diff) / (2.0 * self.sigma * self.sigma)

    @abstractmethod
    def draw(self, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Draw n atoms i.i.d. with replacement.

        Returns:
            Tuple of (indices, log p_t(z | x_i), log q(x_i))
        """
        pass

    @abstractmethod
    def full_log_probs(self) -> np.ndarray:
        """Normalized log q over all N atoms"""
        pass


class UniformProposal(BaseProposal):
    """q(x_i) = 1 / N"""

    def draw(self, n: int, rng: np.random.Generator):
        indices = rng.integers(self.data.n, size=n)
        log_q = np.full(n, -math.log(self.data.n))
        return indices, self.point_log_lik(indices), log_q

    def full_log_probs(self) -> np.ndarray:
        return np.full(self.data.n, -math.log(self.data.n))


class KnnProposal(BaseProposal):
    """Truncated nearest neighbour proposal with a lumped flat tail"""

    def __init__(
        self,
        data: DatasetStore,
        schedule: DiffusionSchedule,
        z: np.ndarray,
        t: float,
        neighbor_indices: np.ndarray,
        neighbor_dists: np.ndarray,
    ):
        super().__init__(data, schedule, z, t)
        self.neighbor_indices = np.asarray(neighbor_indices, dtype=np.int64)
        self.neighbor_dists = np.asarray(neighbor_dists, dtype=np.float64)
        self.k = int(self.neighbor_indices.shape[0])
        self.n_total = data.n
        two_var = 2.0 * self.sigma * self.sigma
        # squared from the search distances; the rows are not retrieved
        self.neighbor_log_lik = -(self.neighbor_dists * self.neighbor_dists) / two_var
        self.tail_log_lik = float(self.neighbor_log_lik[-1])
        tail_count = self.n_total - self.k
        self.log_tail_mass_unnorm = math.log(tail_count) + self.tail_log_lik if tail_count > 0 else -math.inf
        self.log_Zq = float(logsumexp(np.append(self.neighbor_log_lik, self.log_tail_mass_unnorm)))
        self._members = set(self.neighbor_indices.tolist())

    def __repr__(self):
        return f"<KnnProposal(k={self.k}, N={self.n_total}, log_Zq={self.log_Zq:.4g}, tail={self.tail_mass:.3g})>"

    @property
    def tail_mass(self) -> float:
        return math.exp(self.log_tail_mass_unnorm - self.log_Zq)

    def atom_log_probs(self) -> np.ndarray:
        """Normalized log masses of the k neighbours followed by the lumped tail"""
        return np.append(self.neighbor_log_lik, self.log_tail_mass_unnorm) - self.log_Zq

    def full_log_probs(self) -> np.ndarray:
        log_q = np.full(self.n_total, self.tail_log_lik - self.log_Zq)
        log_q[self.neighbor_indices] = self.neighbor_log_lik - self.log_Zq
        return log_q

    def _draw_tail(self, rng: np.random.Generator) -> int:
        tries = 0
        while True:
            tries += 1
            candidate = int(rng.integers(self.n_total))
            if candidate not in self._members:
                if tries > TAIL_REJECTION_WARN:
                    logger.warning(f"Tail rejection took {tries} tries (k={self.k}, N={self.n_total})")
                return candidate

    def draw(self, n: int, rng: np.random.Generator):
        probs = np.exp(self.atom_log_probs())
        cdf = np.cumsum(probs)
        last = self.k if self.k < self.n_total else self.k - 1
        atoms = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), last)

        indices = np.empty(n, dtype=np.int64)
        log_lik = np.empty(n)
        in_knn = atoms < self.k
        indices[in_knn] = self.neighbor_indices[atoms[in_knn]]
        log_lik[in_knn] = self.neighbor_log_lik[atoms[in_knn]]

        tail_pos = np.flatnonzero(~in_knn)
        if tail_pos.size:
            tail_idx = np.array([self._draw_tail(rng) for _ in tail_pos], dtype=np.int64)
            indices[tail_pos] = tail_idx
            log_lik[tail_pos] = self.point_log_lik(tail_idx)

        log_q = np.where(in_knn, log_lik, self.tail_log_lik) - self.log_Zq
        return indices, log_lik, log_q


def build_knn_proposal(
    index: BaseIndex,
    data: DatasetStore,
    schedule: DiffusionSchedule,
    z: np.ndarray,
    t: float,
    k: int,
) -> KnnProposal:
    """
    Search the k nearest atoms of z / s(t) and build the truncated proposal.

    Args:
        index: Nearest neighbour index over `data`
        data: Dataset
        schedule: Diffusion schedule
        z: Noisy observation
        t: Diffusion time
        k: Neighbours kept exactly (1 <= k <= N)

    Returns:
        KnnProposal
    """
    t = check_time(t)
    if not 1 <= k <= data.n:
        raise ArgumentError(f"k must satisfy 1 <= k <= N={data.n}, got {k}")
    query = np.asarray(z, dtype=np.float64).reshape(-1) / schedule.scale(t)
    neighbours = index.search(query, k)
    return KnnProposal(data, schedule, z, t, neighbours.indices, neighbours.dists)


def proposal_divergence(
    index: BaseIndex,
    data: DatasetStore,
    schedule: DiffusionSchedule,
    z: np.ndarray,
    t: float,
    k: int,
) -> dict:
    """
    Compare the KNN proposal with the exact posterior.

    Returns:
        Dict with total variation distance, proposal tail mass and the
        posterior mass outside the neighbour set
    """
    proposal = build_knn_proposal(index, data, schedule, z, t, k)
    posterior = exact_posterior(data, schedule, z, t)
    p = posterior.probs
    q = np.exp(proposal.full_log_probs())
    outside = np.ones(data.n, dtype=bool)
    outside[proposal.neighbor_indices] = False
    return {
        'total_variation': 0.5 * float(np.abs(p - q).sum()),
        'tail_mass': proposal.tail_mass,
        'posterior_outside_knn': float(p[outside].sum()),
    }
