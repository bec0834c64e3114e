"""
Base estimator class, ScoreEstimate dataclass and estimator specs
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from config import DEFAULT_K, DEFAULT_N
from db.store import DatasetStore
from diffusion.schedules import DiffusionSchedule, score_from_mean
from errors import ConfigError


class EstimatorKind(Enum):
    """Estimator family"""
    EXACT = "exact"
    MC_SINGLE = "mc_single"
    MC_POSTERIOR = "mc_posterior"
    UNIFORM = "uniform"
    STF = "stf"
    KNN = "knn"
    IS = "is"


@dataclass(frozen=True)
class EstimatorSpec:
    """One estimator configuration in an evaluation protocol"""
    kind: EstimatorKind
    n: int = DEFAULT_N
    k: int = DEFAULT_K

    @classmethod
    def parse(cls, name: str, n: int = DEFAULT_N, k: int = DEFAULT_K) -> "EstimatorSpec":
        try:
            kind = EstimatorKind(name.strip().lower())
        except ValueError:
            choices = ", ".join(e.value for e in EstimatorKind)
            raise ConfigError(f"unknown estimator {name!r} (choose from {choices})")
        if n < 1:
            raise ConfigError(f"estimator n must be >= 1, got {n}")
        if k < 1:
            raise ConfigError(f"estimator k must be >= 1, got {k}")
        if kind is EstimatorKind.STF and n < 2:
            raise ConfigError("stf needs n >= 2")
        return cls(kind=kind, n=n, k=k)

    @classmethod
    def from_token(cls, token: str, n: int = DEFAULT_N, k: int = DEFAULT_K) -> "EstimatorSpec":
        """Parse "kind" or "kind:n=256:k=16"; fields not written in the token take n and k"""
        name, *options = token.strip().split(":")
        values = {'n': n, 'k': k}
        for option in options:
            key, sep, raw = option.partition("=")
            key = key.strip().lower()
            if not sep or key not in values:
                raise ConfigError(f"bad estimator option {option!r} in {token!r} (use n=INT or k=INT)")
            try:
                values[key] = int(raw)
            except ValueError:
                raise ConfigError(f"bad value for {key} in {token!r}: {raw!r}")
        return cls.parse(name, **values)

    @property
    def grid_key(self):
        """(kind, n, k) with the fields the estimator ignores blanked out"""
        return (
            self.kind,
            self.n if self.uses_batch else None,
            self.k if self.uses_neighbours else None,
        )

    @property
    def label(self) -> str:
        return self.kind.value

    @property
    def uses_batch(self) -> bool:
        return self.kind not in (EstimatorKind.EXACT, EstimatorKind.MC_SINGLE)

    @property
    def uses_neighbours(self) -> bool:
        return self.kind in (EstimatorKind.KNN, EstimatorKind.IS)


def expand_specs(
    tokens: Sequence[str],
    ns: Sequence[int] = (DEFAULT_N,),
    ks: Sequence[int] = (DEFAULT_K,),
) -> List[EstimatorSpec]:
    """
    Expand estimator tokens over an (n, k) grid.

    A token's own n=/k= options pin that field. n is only varied for batch
    estimators and k only for neighbour estimators, so `exact` appears once
    however large the grid is.

    Args:
        tokens: Estimator tokens, e.g. ["mc_posterior", "knn:n=256"]
        ns: Batch sizes
        ks: Neighbour counts

    Returns:
        Specs in token, then n, then k order, without duplicates
    """
    if not ns or not ks:
        raise ConfigError("the n and k grids must not be empty")
    specs, seen = [], set()
    for token in tokens:
        for n in ns:
            for k in ks:
                spec = EstimatorSpec.from_token(token, n=n, k=k)
                if spec.grid_key not in seen:
                    seen.add(spec.grid_key)
                    specs.append(spec)
    return specs


@dataclass(frozen=True, eq=False)
class ScoreEstimate:
    """Posterior mean estimate and the score it implies"""
    mean_hat: np.ndarray
    score_hat: np.ndarray  # (mean_hat - z / s(t)) / sigma(t)^2
    ess: float  # (sum of squared normalized weights)^-1
    n_used: int


def make_estimate(
    schedule: DiffusionSchedule,
    z: np.ndarray,
    t: float,
    mean_hat: np.ndarray,
    ess: float,
    n_used: int,
) -> ScoreEstimate:
    """Wrap a posterior mean estimate, deriving the score from it"""
    mean_hat = np.asarray(mean_hat, dtype=np.float64)
    score = score_from_mean(schedule, mean_hat, np.asarray(z, dtype=np.float64), t)
    return ScoreEstimate(mean_hat=mean_hat, score_hat=score, ess=float(ess), n_used=int(n_used))


def weighted_mean(points: np.ndarray, indices: np.ndarray, log_w: np.ndarray):
    """
    Self-normalized weighted average of dataset rows.

    Weights of repeated draws are pooled per atom before normalization, so a
    batch that drew a single atom returns that atom exactly.

    Args:
        points: (N, d) dataset matrix
        indices: (n,) drawn atom indices
        log_w: (n,) unnormalized log weights

    Returns:
        Tuple of (mean, ess, normalized per-draw weights)
    """
    log_w = np.asarray(log_w, dtype=np.float64)
    w = np.exp(log_w - log_w.max())
    w_bar = w / w.sum()
    ess = 1.0 / float(np.sum(w_bar * w_bar))

    atoms, inverse = np.unique(indices, return_inverse=True)
    pooled = np.bincount(inverse, weights=w, minlength=atoms.shape[0])
    pooled = pooled / pooled.sum()
    mean = pooled @ points[atoms]
    return mean, ess, w_bar


class BaseEstimator(ABC):
    """Abstract base class for posterior mean / score estimators"""

    def __init__(self, data: DatasetStore, schedule: DiffusionSchedule, spec: EstimatorSpec):
        self.data = data
        self.schedule = schedule
        self.spec = spec
        self.name = spec.label
        self.logger = logging.getLogger(f"estimator.{self.name}")

    @abstractmethod
    def estimate(
        self,
        z: np.ndarray,
        t: float,
        rng: np.random.Generator,
        x_ref: Optional[int] = None,
    ) -> ScoreEstimate:
        """
        Estimate the posterior mean and score at (z, t).
        Must be implemented by subclasses.

        Args:
            z: Noisy observation
            t: Diffusion time
            rng: Random stream for this evaluation
            x_ref: Index of the dataset point that generated z, when known

        Returns:
            ScoreEstimate
        """
        pass

    def check_ess(self, estimate: ScoreEstimate):
        """Log degenerate SNIS weights (expected at small t)"""
        if estimate.n_used > 1 and estimate.ess < estimate.n_used / 10:
            self.logger.debug(f"Low ESS {estimate.ess:.1f} of {estimate.n_used}")
