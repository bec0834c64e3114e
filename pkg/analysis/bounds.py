"""
Verification of the two variance bounds on the KNN-SNIS posterior mean estimator.

Both sides are evaluated exactly with the analytic SNIS covariance, for
random (x ~ D, t log-uniform in [t_min, t_max], z ~ p_t(z | x)) trials.

    Bound 1:  Tr Cov(KNN) <= rho * Tr Cov(MC)
    Bound 2:  Tr Cov(KNN) <= (1 - sum_{x not in K} p_t(z|x) / P(z)) * Tr Cov(MC)
                             + ((N - k) / N) * Tr Cov(U)

Cov(MC) is the SNIS covariance with the exact posterior as proposal,
Cov(U) the uniform-proposal covariance, and rho = Z_q / P(z) with the
unnormalized marginal P(z) = sum_i p_t(z | x_i), so rho >= 1 with equality
when the posterior is concentrated on the neighbour set.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from scipy.special import logsumexp

from config import BOUND_FLOOR, BOUND_TOLERANCE
from db.store import DatasetStore
from diffusion.oracle import Target, exact_posterior, snis_covariance_diag, uniform_trace
from diffusion.schedules import DiffusionSchedule
from errors import ArgumentError
from estimators.proposals import build_knn_proposal
from index.base import BaseIndex
from index.exact import build as build_index
from streams import derive_rng

logger = logging.getLogger(__name__)

BOUND_HEADER = ['trial', 't', 'k', 'lhs', 'rhs', 'rho', 'satisfied', 'margin']


@dataclass
class BoundTerms:
    """Exact terms of both bounds at one (z, t)"""
    t: float
    k: int
    n_total: int
    knn_trace: float
    mc_trace: float
    uniform_trace: float
    rho: float
    coefficient: float  # posterior mass on the neighbour set

    @property
    def tail_fraction(self) -> float:
        return (self.n_total - self.k) / self.n_total

    @property
    def theorem1_rhs(self) -> float:
        return self.rho * self.mc_trace

    @property
    def theorem2_rhs(self) -> float:
        return self.coefficient * self.mc_trace + self.tail_fraction * self.uniform_trace


def evaluate_bounds(
    data: DatasetStore,
    schedule: DiffusionSchedule,
    index: BaseIndex,
    z: np.ndarray,
    t: float,
    k: int,
    n: int,
) -> BoundTerms:
    """
    Compute every trace and coefficient appearing in the bounds.

    Args:
        data: Dataset
        schedule: Diffusion schedule
        index: Nearest neighbour index over `data`
        z: Noisy observation
        t: Diffusion time
        k: Neighbours in the proposal
        n: Batch size

    Returns:
        BoundTerms
    """
    if not 1 <= k <= data.n:
        raise ArgumentError(f"k must satisfy 1 <= k <= N={data.n}, got {k}")
    proposal = build_knn_proposal(index, data, schedule, z, t, k)
    posterior = exact_posterior(data, schedule, z, t)

    knn_log_q = proposal.full_log_probs()
    knn_trace = float(snis_covariance_diag(data, schedule, z, t, knn_log_q, n, Target.MEAN).sum())
    mc_trace = float(snis_covariance_diag(data, schedule, z, t, posterior.log_probs, n, Target.MEAN).sum())
    coefficient = math.exp(float(logsumexp(posterior.log_probs[proposal.neighbor_indices])))

    return BoundTerms(
        t=float(t),
        k=k,
        n_total=data.n,
        knn_trace=knn_trace,
        mc_trace=mc_trace,
        uniform_trace=uniform_trace(data, schedule, z, t, n),
        rho=math.exp(proposal.log_Zq - posterior.log_P),
        coefficient=min(1.0, coefficient),
    )


@dataclass
class BoundRow:
    """One verification trial"""
    trial: int
    t: float
    k: int
    lhs: float
    rhs: float
    rho: float
    satisfied: bool
    margin: float  # rhs - lhs

    @classmethod
    def from_sides(cls, trial: int, t: float, k: int, lhs: float, rhs: float, rho: float) -> "BoundRow":
        return cls(
            trial=trial, t=t, k=k, lhs=lhs, rhs=rhs, rho=rho,
            satisfied=lhs <= rhs * (1.0 + BOUND_TOLERANCE) + BOUND_FLOOR,
            margin=rhs - lhs,
        )

    def as_csv_fields(self) -> List[str]:
        return [
            str(self.trial), repr(float(self.t)), str(self.k), repr(float(self.lhs)),
            repr(float(self.rhs)), repr(float(self.rho)), str(self.satisfied).lower(),
            repr(float(self.margin)),
        ]


@dataclass
class BoundReport:
    """All trials of one bound"""
    theorem: int
    rows: List[BoundRow] = field(default_factory=list)

    @property
    def violations(self) -> int:
        return sum(1 for row in self.rows if not row.satisfied)

    @property
    def min_rho(self) -> float:
        return min((row.rho for row in self.rows), default=float('nan'))

    def to_csv_text(self) -> str:
        lines = [",".join(BOUND_HEADER)]
        lines.extend(",".join(row.as_csv_fields()) for row in self.rows)
        return "\n".join(lines) + "\n"

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv_text())
        return path

    def summary(self) -> str:
        return f"{self.violations} violations / {len(self.rows)} trials"


def trial_point(data: DatasetStore, schedule: DiffusionSchedule, seed: int, trial: int):
    """
    Draw the (z, t) of one trial from its own stream.

    Returns:
        Tuple of (z, t)
    """
    rng = derive_rng(seed, 2, trial)
    x = data.points[rng.integers(data.n)]
    t = math.exp(rng.uniform(math.log(schedule.t_min), math.log(schedule.t_max)))
    z = schedule.scale(t) * (x + schedule.sigma(t) * rng.standard_normal(data.dim))
    return z, t


def _verify(
    theorem: int,
    data: DatasetStore,
    schedule: DiffusionSchedule,
    trials: int,
    k: int,
    n: int,
    seed: int,
    index: Optional[BaseIndex],
    workers: int,
) -> BoundReport:
    if trials < 1:
        raise ArgumentError(f"trials must be >= 1, got {trials}")
    if not 1 <= k <= data.n:
        raise ArgumentError(f"k must satisfy 1 <= k <= N={data.n}, got {k}")
    index = index if index is not None else build_index(data)

    def run_trial(trial: int) -> BoundRow:
        z, t = trial_point(data, schedule, seed, trial)
        terms = evaluate_bounds(data, schedule, index, z, t, k, n)
        rhs = terms.theorem1_rhs if theorem == 1 else terms.theorem2_rhs
        return BoundRow.from_sides(trial, terms.t, k, terms.knn_trace, rhs, terms.rho)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_trial, range(trials)))
    else:
        rows = [run_trial(i) for i in range(trials)]

    report = BoundReport(theorem=theorem, rows=rows)
    log = logger.warning if report.violations else logger.info
    log(f"Bound {theorem} (k={k}, n={n}): {report.summary()}, min rho {report.min_rho:.12g}")
    return report


def verify_theorem1(
    data: DatasetStore,
    schedule: DiffusionSchedule,
    trials: int,
    k: int,
    n: int,
    seed: int,
    index: Optional[BaseIndex] = None,
    workers: int = 1,
) -> BoundReport:
    """
    Check Tr Cov(KNN) <= rho * Tr Cov(MC) over random trials.

    Args:
        data: Dataset
        schedule: Diffusion schedule (t is drawn log-uniformly in [t_min, t_max])
        trials: Number of random (z, t)
        k: Neighbours in the proposal
        n: Batch size
        seed: Master seed; trial i uses its own derived stream
        index: Nearest neighbour index (built if omitted)
        workers: Threads running trials in parallel

    Returns:
        BoundReport
    """
    return _verify(1, data, schedule, trials, k, n, seed, index, workers)


def verify_theorem2(
    data: DatasetStore,
    schedule: DiffusionSchedule,
    trials: int,
    k: int,
    n: int,
    seed: int,
    index: Optional[BaseIndex] = None,
    workers: int = 1,
) -> BoundReport:
    """Check the mixed posterior-MC / uniform bound over random trials"""
    return _verify(2, data, schedule, trials, k, n, seed, index, workers)
