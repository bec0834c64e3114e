"""
Diffusion schedules: noise level sigma(t), scale s(t), forward likelihoods
and conditional scores for the EDM and variance preserving processes.

The forward process is z = s(t) * (x + sigma(t) * eps). All likelihoods are
expressed for the scaled query z / s(t):

    log p_t(z | x) = -||z / s(t) - x||^2 / (2 sigma(t)^2)   (constant-free)

The Gaussian normalizer is dropped by default; it cancels in every posterior
and importance weight.
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np

from config import T_MIN, T_MAX, VP_BETA_D, VP_BETA_MIN
from errors import ConfigError, DimensionError, check_time


class ScheduleKind(Enum):
    """Supported forward processes"""
    EDM = "edm"
    VP = "vp"


@dataclass(frozen=True)
class DiffusionSchedule:
    """Noise level and scale of the forward process"""
    kind: ScheduleKind = ScheduleKind.EDM
    t_min: float = T_MIN
    t_max: float = T_MAX
    beta_d: float = VP_BETA_D
    beta_min: float = VP_BETA_MIN

    def __post_init__(self):
        if not 0.0 < self.t_min < self.t_max:
            raise ConfigError(f"schedule needs 0 < t_min < t_max, got t_min={self.t_min}, t_max={self.t_max}")
        if self.kind is ScheduleKind.VP and not (self.beta_d > 0.0 and self.beta_min > 0.0):
            raise ConfigError("VP schedule needs positive beta_d and beta_min")

    @classmethod
    def from_dict(cls, values: dict) -> "DiffusionSchedule":
        """Build a schedule from the `[schedule]` config section"""
        try:
            kind = ScheduleKind(str(values.get("kind", "edm")).lower())
        except ValueError:
            raise ConfigError(f"unknown schedule kind: {values.get('kind')!r}")
        try:
            return cls(
                kind=kind,
                t_min=float(values.get("t_min", T_MIN)),
                t_max=float(values.get("t_max", T_MAX)),
                beta_d=float(values.get("beta_d", VP_BETA_D)),
                beta_min=float(values.get("beta_min", VP_BETA_MIN)),
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"bad schedule value: {e}")

    @property
    def is_edm(self) -> bool:
        return self.kind is ScheduleKind.EDM

    def _exponent(self, t: float) -> float:
        # 0.5 * beta_d * t^2 + beta_min * t
        return 0.5 * self.beta_d * t * t + self.beta_min * t

    def sigma(self, t: float) -> float:
        """Noise level sigma(t)"""
        t = check_time(t)
        if self.is_edm:
            return t
        return math.sqrt(math.expm1(self._exponent(t)))

    def scale(self, t: float) -> float:
        """Data scale s(t)"""
        t = check_time(t)
        if self.is_edm:
            return 1.0
        return math.exp(-0.5 * self._exponent(t))

    def sigma_deriv(self, t: float) -> float:
        """d sigma / dt"""
        t = check_time(t)
        if self.is_edm:
            return 1.0
        rate = self.beta_d * t + self.beta_min
        return rate * math.exp(self._exponent(t)) / (2.0 * self.sigma(t))

    def scale_deriv(self, t: float) -> float:
        """d s / dt"""
        t = check_time(t)
        if self.is_edm:
            return 0.0
        return -0.5 * (self.beta_d * t + self.beta_min) * self.scale(t)

    def pf_ode_drift(self, z: np.ndarray, t: float, score: np.ndarray) -> np.ndarray:
        """
        Probability flow ODE drift dz/dt.

        `score` is the score with respect to the scaled variable z / s(t),
        i.e. (mu - z / s) / sigma^2. For EDM this reduces to -t * score.

        Args:
            z: Current state
            t: Current time
            score: Score estimate at (z, t)

        Returns:
            dz/dt as an array shaped like z
        """
        s = self.scale(t)
        sig = self.sigma(t)
        if self.is_edm:
            return -t * score
        return (self.scale_deriv(t) / s) * z - s * self.sigma_deriv(t) * sig * score


def sigma(schedule: DiffusionSchedule, t: float) -> float:
    return schedule.sigma(t)


def scale(schedule: DiffusionSchedule, t: float) -> float:
    return schedule.scale(t)


def _check_dims(x: np.ndarray, z: np.ndarray):
    if x.shape[-1] != z.shape[-1]:
        raise DimensionError(f"dimension mismatch: x has {x.shape[-1]}, z has {z.shape[-1]}")


def log_forward_likelihood(
    schedule: DiffusionSchedule,
    x: np.ndarray,
    z: np.ndarray,
    t: float,
    exact: bool = False,
) -> Union[float, np.ndarray]:
    """
    Log-density of N(z / s(t); x, sigma(t)^2 I).

    Args:
        schedule: Diffusion schedule
        x: Clean point (d,) or a matrix of points (N, d)
        z: Noisy point (d,)
        t: Diffusion time
        exact: Include the -(d/2) log(2 pi sigma^2) normalizer

    Returns:
        A float for a single x, an (N,) array for a matrix
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    _check_dims(x, z)
    sig = schedule.sigma(t)
    query = z / schedule.scale(t)
    diff = x - query
    log_lik = -np.sum(diff * diff, axis=-1) / (2.0 * sig * sig)
    if exact:
        d = z.shape[-1]
        log_lik = log_lik - 0.5 * d * math.log(2.0 * math.pi * sig * sig)
    if np.ndim(log_lik) == 0:
        return float(log_lik)
    return log_lik


def conditional_score(schedule: DiffusionSchedule, x: np.ndarray, z: np.ndarray, t: float) -> np.ndarray:
    """Score of the forward likelihood: (x - z / s(t)) / sigma(t)^2"""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    _check_dims(x, z)
    sig = schedule.sigma(t)
    return (x - z / schedule.scale(t)) / (sig * sig)


def score_from_mean(schedule: DiffusionSchedule, mean: np.ndarray, z: np.ndarray, t: float) -> np.ndarray:
    """Marginal score implied by a posterior mean (the same affine map)"""
    return conditional_score(schedule, mean, z, t)
