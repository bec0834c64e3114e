"""
Estimator evaluation harness: bias^2 / variance / MSE sweeps over t.

For every t in the grid, m points are drawn as x ~ D, z ~ p_t(z | x). Each
estimator is run `reps` times per z. The per-z sample mean defines the bias
against the exact posterior mean, the per-z sample variance (divisor
reps - 1) defines the variance, and both are averaged over z and divided
by d:

    MSE = (1 / d) E ||mu_hat - mu||^2 = bias^2 + variance
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from config import (
    DEFAULT_SEED, EVAL_ESTIMATORS, EVAL_POINTS, EVAL_REPS, EVAL_T_COUNT, EVAL_T_HI,
    EVAL_T_LO, SOFT_VARIANCE_TOL,
)
from db.store import DatasetStore
from diffusion.oracle import Target, exact_posterior_mean, snis_covariance_diag, uniform_log_probs
from diffusion.schedules import DiffusionSchedule, score_from_mean
from errors import ConfigError, EvaluationError, NNScoreError
from estimators import EstimatorKind, EstimatorSpec, build_estimator, build_knn_proposal
from index.base import BaseIndex
from index.exact import build as build_index
from streams import derive_rng

logger = logging.getLogger(__name__)

REPORT_HEADER = ['t', 'estimator', 'target', 'n', 'k', 'bias_sq', 'variance', 'mse', 'ess_mean']


def log_t_grid(lo: float = EVAL_T_LO, hi: float = EVAL_T_HI, count: int = EVAL_T_COUNT) -> np.ndarray:
    """Log-spaced t grid with exact endpoints"""
    if not 0.0 < lo < hi or count < 1:
        raise ConfigError(f"bad t grid: lo={lo}, hi={hi}, count={count}")
    if count == 1:
        return np.array([lo])
    grid = np.geomspace(lo, hi, count)
    grid[0], grid[-1] = lo, hi
    return grid


def _default_estimators() -> List[EstimatorSpec]:
    return [EstimatorSpec.parse(name) for name in EVAL_ESTIMATORS]


@dataclass
class EvalProtocol:
    """Evaluation sweep parameters"""
    t_grid: Sequence[float] = field(default_factory=log_t_grid)
    m_points: int = EVAL_POINTS
    reps: int = EVAL_REPS
    estimators: List[EstimatorSpec] = field(default_factory=_default_estimators)
    master_seed: int = DEFAULT_SEED

    def validate(self):
        if self.m_points < 1:
            raise ConfigError(f"m_points must be >= 1, got {self.m_points}")
        if self.reps < 2:
            raise ConfigError(f"reps must be >= 2 to estimate a variance, got {self.reps}")
        if len(self.t_grid) == 0 or any(not t > 0.0 for t in self.t_grid):
            raise ConfigError("t grid must be a non-empty list of positive times")
        if not self.estimators:
            raise ConfigError("no estimators to evaluate")


@dataclass
class ReportRow:
    """Statistics of one estimator and target at one t"""
    t: float
    estimator: str
    target: str
    n: int
    k: int
    bias_sq: float
    variance: float
    mse: float
    ess_mean: float
    analytic_variance: Optional[float] = None  # analytic covariance trace / d, SNIS rows only

    def as_csv_fields(self) -> List[str]:
        return [
            repr(float(self.t)), self.estimator, self.target, str(self.n), str(self.k),
            repr(float(self.bias_sq)), repr(float(self.variance)), repr(float(self.mse)),
            repr(float(self.ess_mean)),
        ]


@dataclass
class EstimatorReport:
    """Rows of an evaluation sweep"""
    rows: List[ReportRow] = field(default_factory=list)

    def to_csv_text(self) -> str:
        lines = [",".join(REPORT_HEADER)]
        lines.extend(",".join(row.as_csv_fields()) for row in self.rows)
        return "\n".join(lines) + "\n"

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv_text())
        return path

    def select(
        self,
        estimator: str,
        target: str = "mean",
        n: Optional[int] = None,
        k: Optional[int] = None,
    ) -> List[ReportRow]:
        """Rows of one estimator and target, optionally narrowed to one (n, k) setting"""
        return [
            r for r in self.rows
            if r.estimator == estimator and r.target == target
            and (n is None or r.n == n) and (k is None or r.k == k)
        ]

    def settings(self) -> List[tuple]:
        """Distinct (estimator, n, k) settings in row order"""
        seen = []
        for r in self.rows:
            key = (r.estimator, r.n, r.k)
            if key not in seen:
                seen.append(key)
        return seen


def _batch_fields(spec: EstimatorSpec):
    n = spec.n if spec.uses_batch else 1
    k = spec.k if spec.uses_neighbours else 0
    return n, k


class _TimeSlice:
    """All estimator evaluations at one t"""

    def __init__(self, data, schedule, estimators, protocol, index, t_index, t):
        self.data = data
        self.schedule = schedule
        self.estimators = estimators
        self.protocol = protocol
        self.index = index
        self.t_index = t_index
        self.t = float(t)
        self.scale = schedule.scale(self.t)
        self.sigma = schedule.sigma(self.t)

        rng = derive_rng(protocol.master_seed, 0, t_index)
        self.x_idx = rng.integers(data.n, size=protocol.m_points)
        eps = rng.standard_normal((protocol.m_points, data.dim))
        self.z = self.scale * (data.points[self.x_idx] + self.sigma * eps)

    def _analytic(self, spec: EstimatorSpec, z: np.ndarray) -> float:
        if spec.kind is EstimatorKind.UNIFORM:
            log_q = uniform_log_probs(self.data)
        else:
            k = min(spec.k, self.data.n)
            log_q = build_knn_proposal(self.index, self.data, self.schedule, z, self.t, k).full_log_probs()
        diag = snis_covariance_diag(self.data, self.schedule, z, self.t, log_q, spec.n, Target.MEAN)
        return float(diag.sum() / self.data.dim)

    def evaluate_point(self, j: int) -> np.ndarray:
        """
        Returns:
            (E, 6) array: mean bias^2, mean variance, score bias^2,
            score variance, mean ESS, analytic variance (nan if n/a)
        """
        z = self.z[j]
        d = self.data.dim
        reps = self.protocol.reps
        mu = exact_posterior_mean(self.data, self.schedule, z, self.t)
        true_score = score_from_mean(self.schedule, mu, z, self.t)

        out = np.full((len(self.estimators), 6), np.nan)
        for e, estimator in enumerate(self.estimators):
            means = np.empty((reps, d))
            scores = np.empty((reps, d))
            ess = np.empty(reps)
            for r in range(reps):
                rng = derive_rng(self.protocol.master_seed, 1, self.t_index, j, e, r)
                try:
                    est = estimator.estimate(z, self.t, rng, x_ref=int(self.x_idx[j]))
                except NNScoreError as err:
                    raise EvaluationError(f"{estimator.name}: {err}", self.t, j) from err
                means[r] = est.mean_hat
                scores[r] = est.score_hat
                ess[r] = est.ess
            out[e, 0] = np.sum((means.mean(axis=0) - mu) ** 2) / d
            out[e, 1] = np.sum(means.var(axis=0, ddof=1)) / d
            out[e, 2] = np.sum((scores.mean(axis=0) - true_score) ** 2) / d
            out[e, 3] = np.sum(scores.var(axis=0, ddof=1)) / d
            out[e, 4] = ess.mean()
            if estimator.spec.kind in (EstimatorKind.UNIFORM, EstimatorKind.KNN):
                out[e, 5] = self._analytic(estimator.spec, z)
        return out


def run_eval(
    data: DatasetStore,
    schedule: DiffusionSchedule,
    protocol: EvalProtocol,
    index: Optional[BaseIndex] = None,
    workers: int = 1,
) -> EstimatorReport:
    """
    Run the bias / variance / MSE sweep.

    Args:
        data: Dataset
        schedule: Diffusion schedule
        protocol: t grid, point and repetition counts, estimators, seed
        index: Nearest neighbour index (built if omitted)
        workers: Threads evaluating points in parallel

    Returns:
        EstimatorReport with one mean row and one score row per (t, estimator)
    """
    protocol.validate()
    index = index if index is not None else build_index(data)
    estimators = [build_estimator(spec, data, schedule, index) for spec in protocol.estimators]
    report = EstimatorReport()

    for ti, t in enumerate(protocol.t_grid):
        time_slice = _TimeSlice(data, schedule, estimators, protocol, index, ti, t)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                per_point = list(pool.map(time_slice.evaluate_point, range(protocol.m_points)))
        else:
            per_point = [time_slice.evaluate_point(j) for j in range(protocol.m_points)]
        stats = np.mean(np.stack(per_point), axis=0)

        for e, spec in enumerate(protocol.estimators):
            n, k = _batch_fields(spec)
            bias_m, var_m, bias_s, var_s, ess_mean, analytic = stats[e]
            analytic = None if np.isnan(analytic) else float(analytic)
            report.rows.append(ReportRow(
                t=float(t), estimator=spec.label, target=Target.MEAN.value, n=n, k=k,
                bias_sq=bias_m, variance=var_m, mse=bias_m + var_m, ess_mean=ess_mean,
                analytic_variance=analytic,
            ))
            score_analytic = None if analytic is None else analytic / time_slice.sigma ** 4
            report.rows.append(ReportRow(
                t=float(t), estimator=spec.label, target=Target.SCORE.value, n=n, k=k,
                bias_sq=bias_s, variance=var_s, mse=bias_s + var_s, ess_mean=ess_mean,
                analytic_variance=score_analytic,
            ))
            _soft_check(spec, float(t), var_m, analytic, ess_mean)

        logger.info(f"t={t:.4g} done ({ti + 1}/{len(protocol.t_grid)})")

    return report


def _soft_check(spec: EstimatorSpec, t: float, empirical: float, analytic: Optional[float], ess_mean: float):
    """Compare empirical variance with the analytic trace (reported, never raised)"""
    if analytic is None or spec.n < 256 or ess_mean <= spec.n / 10:
        if spec.uses_batch and ess_mean <= spec.n / 10:
            logger.debug(f"{spec.label} at t={t:.4g}: low mean ESS {ess_mean:.1f} of {spec.n}")
        return
    scale = max(analytic, 1e-300)
    rel = abs(empirical - analytic) / scale
    if rel > SOFT_VARIANCE_TOL:
        logger.warning(
            f"{spec.label} at t={t:.4g}: empirical variance {empirical:.3e} vs analytic {analytic:.3e} "
            f"({rel:.0%} apart)"
        )
