"""
Probability flow ODE sampler driven by a pluggable score source.

The ODE is integrated from t_max down to t_min:

    dz/dt = (s'(t) / s(t)) z - s(t) sigma'(t) sigma(t) score(z, t)

which is -t * score for EDM. A score source can be the exact oracle, an
SNIS estimator or the single-sample conditional score. With t_switch set,
the configured source is used only above t_switch; integration either stops
there or continues to t_min with the exact score.
"""
import logging
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from config import (
    DEFAULT_K, DEFAULT_N, DEFAULT_SEED, SAMPLER_GRID, SAMPLER_RHO, SAMPLER_SAMPLES,
    SAMPLER_SCORE, SAMPLER_SOLVER, SAMPLER_STEPS, T_MAX, T_MIN,
)
from db.store import DatasetStore
from diffusion.oracle import exact_score
from diffusion.schedules import DiffusionSchedule, conditional_score
from errors import ArgumentError, ConfigError, check_time
from estimators import BaseEstimator, EstimatorSpec, build_estimator
from index.base import BaseIndex
from streams import derive_rng

logger = logging.getLogger(__name__)

# stream prefixes, disjoint from the evaluation (0, 1) and bound (2) streams
_PRIOR_STREAM = 3
_SCORE_STREAM = 4


class SolverKind(Enum):
    EULER = "euler"
    HEUN = "heun"


class GridKind(Enum):
    RHO = "rho"
    LINEAR = "linear"
    LOG = "log"


class ScoreSourceKind(Enum):
    EXACT = "exact"
    KNN = "knn"
    UNIFORM = "uniform"


class HandoffKind(Enum):
    STOP = "stop"
    EXACT = "exact"


def _enum(cls, value, what: str):
    if isinstance(value, cls):
        return value
    try:
        return cls(str(value).strip().lower())
    except ValueError:
        choices = ", ".join(e.value for e in cls)
        raise ConfigError(f"unknown {what} {value!r} (choose from {choices})")


@dataclass
class SamplerConfig:
    """PF-ODE integration settings"""
    steps: int = SAMPLER_STEPS
    t_min: float = T_MIN
    t_max: float = T_MAX
    solver: SolverKind = SolverKind(SAMPLER_SOLVER)
    score_source: ScoreSourceKind = ScoreSourceKind(SAMPLER_SCORE)
    n: int = DEFAULT_N
    k: int = DEFAULT_K
    t_switch: Optional[float] = None
    handoff: HandoffKind = HandoffKind.STOP
    n_samples: int = SAMPLER_SAMPLES
    seed: int = DEFAULT_SEED
    grid: GridKind = GridKind(SAMPLER_GRID)
    rho: float = SAMPLER_RHO
    shared_stage_batch: bool = False

    def __post_init__(self):
        self.solver = _enum(SolverKind, self.solver, "solver")
        self.score_source = _enum(ScoreSourceKind, self.score_source, "score source")
        self.handoff = _enum(HandoffKind, self.handoff, "handoff")
        self.grid = _enum(GridKind, self.grid, "time grid")

    def validate(self):
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if not 0.0 < self.t_min < self.t_max:
            raise ConfigError(f"sampler needs 0 < t_min < t_max, got {self.t_min}, {self.t_max}")
        if self.t_switch is not None and not self.t_min < self.t_switch <= self.t_max:
            raise ConfigError(
                f"t_switch must satisfy t_min < t_switch <= t_max, got {self.t_switch} "
                f"with [{self.t_min}, {self.t_max}]"
            )
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.n < 1 or self.k < 1:
            raise ConfigError(f"score source needs n >= 1 and k >= 1, got n={self.n}, k={self.k}")
        if self.grid is GridKind.RHO and not self.rho > 0.0:
            raise ConfigError(f"rho must be positive, got {self.rho}")

    @classmethod
    def from_dict(cls, values: dict) -> "SamplerConfig":
        """Build a config from the `[sampler]` section (already typed values)"""
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown sampler keys: {', '.join(sorted(unknown))}")
        return cls(**values)


def time_grid(
    t_min: float,
    t_max: float,
    steps: int,
    grid: GridKind = GridKind.RHO,
    rho: float = SAMPLER_RHO,
) -> np.ndarray:
    """
    Strictly decreasing times from t_max to t_min (both bit-exact).

        rho:    t_i = (t_max^(1/rho) + i/steps * (t_min^(1/rho) - t_max^(1/rho)))^rho
        linear: evenly spaced in t
        log:    evenly spaced in log t

    Args:
        t_min: Final time
        t_max: Initial time
        steps: Number of intervals
        grid: Spacing
        rho: Exponent of the rho spacing

    Returns:
        (steps + 1,) array
    """
    grid = _enum(GridKind, grid, "time grid")
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    if not 0.0 < t_min < t_max:
        raise ConfigError(f"time grid needs 0 < t_min < t_max, got {t_min}, {t_max}")
    frac = np.arange(steps + 1, dtype=np.float64) / steps
    if grid is GridKind.RHO:
        hi, lo = t_max ** (1.0 / rho), t_min ** (1.0 / rho)
        ts = (hi + frac * (lo - hi)) ** rho
    elif grid is GridKind.LINEAR:
        ts = t_max + frac * (t_min - t_max)
    else:
        ts = np.exp(np.log(t_max) + frac * (np.log(t_min) - np.log(t_max)))
    ts[0], ts[-1] = t_max, t_min
    if np.any(np.diff(ts) >= 0.0):
        raise ConfigError(f"time grid with {steps} steps is not strictly decreasing")
    return ts


def insert_time(ts: np.ndarray, t: float) -> np.ndarray:
    """Add t to a decreasing grid unless it is already a grid point"""
    if np.any(ts == t):
        return ts
    pos = int(np.searchsorted(-ts, -t))
    return np.insert(ts, pos, t)


class ScoreSource(ABC):
    """Anything that returns the score (mu - z/s) / sigma^2 at (z, t)"""

    def __init__(self, schedule: DiffusionSchedule):
        self.schedule = schedule

    @property
    def stochastic(self) -> bool:
        return False

    @abstractmethod
    def score(self, z: np.ndarray, t: float, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        pass

    def drift(self, z: np.ndarray, t: float, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        return self.schedule.pf_ode_drift(z, t, self.score(z, t, rng))


class ExactScore(ScoreSource):
    """Brute-force marginal score of the empirical distribution"""

    def __init__(self, data: DatasetStore, schedule: DiffusionSchedule):
        super().__init__(schedule)
        self.data = data

    def score(self, z, t, rng=None):
        return exact_score(self.data, self.schedule, z, t)


class EstimatorScore(ScoreSource):
    """Score from any posterior mean estimator (KNN or uniform SNIS)"""

    def __init__(self, estimator: BaseEstimator):
        super().__init__(estimator.schedule)
        self.estimator = estimator

    @property
    def stochastic(self) -> bool:
        return True

    def score(self, z, t, rng=None):
        if rng is None:
            raise ArgumentError(f"{self.estimator.name} score source needs a random stream")
        return self.estimator.estimate(z, t, rng).score_hat


class ConditionalScore(ScoreSource):
    """Single-sample score (x - z/s) / sigma^2 of one fixed clean point"""

    def __init__(self, schedule: DiffusionSchedule, x: np.ndarray):
        super().__init__(schedule)
        self.x = np.asarray(x, dtype=np.float64)

    def score(self, z, t, rng=None):
        return conditional_score(self.schedule, self.x, z, t)


def build_score_source(
    kind: ScoreSourceKind,
    data: DatasetStore,
    schedule: DiffusionSchedule,
    n: int = DEFAULT_N,
    k: int = DEFAULT_K,
    index: Optional[BaseIndex] = None,
) -> ScoreSource:
    kind = _enum(ScoreSourceKind, kind, "score source")
    if kind is ScoreSourceKind.EXACT:
        return ExactScore(data, schedule)
    spec = EstimatorSpec.parse(kind.value, n=n, k=k)
    return EstimatorScore(build_estimator(spec, data, schedule, index))


def euler_step(
    source: ScoreSource,
    z: np.ndarray,
    t_from: float,
    t_to: float,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    One explicit Euler step of the PF-ODE.

    Args:
        source: Score source
        z: State at t_from
        t_from: Current time
        t_to: Target time
        rng: Stream for a stochastic score source

    Returns:
        State at t_to
    """
    t_from = check_time(t_from)
    z = np.asarray(z, dtype=np.float64)
    return z + (t_to - t_from) * source.drift(z, t_from, rng)


def heun_step(
    source: ScoreSource,
    z: np.ndarray,
    t_from: float,
    t_to: float,
    rng: Optional[np.random.Generator] = None,
    rng_end: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    One second-order Heun step: Euler predictor, then the trapezoidal corrector.

    Args:
        source: Score source
        z: State at t_from
        t_from: Current time
        t_to: Target time (> 0)
        rng: Stream for the score at t_from
        rng_end: Stream for the score at t_to (defaults to `rng`)

    Returns:
        State at t_to
    """
    t_from = check_time(t_from)
    t_to = check_time(t_to)
    z = np.asarray(z, dtype=np.float64)
    h = t_to - t_from
    d_from = source.drift(z, t_from, rng)
    z_pred = z + h * d_from
    d_to = source.drift(z_pred, t_to, rng_end if rng_end is not None else rng)
    return z + 0.5 * h * (d_from + d_to)


def forward_sample(
    data: DatasetStore,
    schedule: DiffusionSchedule,
    t: float,
    count: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Draw z = s(t) * (x + sigma(t) * eps) with x uniform over the dataset.

    Returns:
        (count, d) matrix
    """
    t = check_time(t)
    if count < 1:
        raise ArgumentError(f"count must be >= 1, got {count}")
    idx = rng.integers(data.n, size=count)
    eps = rng.standard_normal((count, data.dim))
    s = schedule.scale(t)
    return s * data.points[idx] + s * schedule.sigma(t) * eps


@dataclass
class SampleResult:
    """Terminal states and optionally every intermediate state"""
    ts: np.ndarray
    states: np.ndarray
    trace: Optional[List[np.ndarray]] = None  # one (n_samples, d) matrix per grid time
    switched: bool = False  # integration stopped at t_switch

    @property
    def t_final(self) -> float:
        return float(self.ts[-1])

    def _rows(self, include_trace: bool):
        if include_trace and self.trace is not None:
            for t, states in zip(self.ts, self.trace):
                for i, row in enumerate(states):
                    yield i, t, row
        else:
            for i, row in enumerate(self.states):
                yield i, self.t_final, row

    def to_csv_text(self, include_trace: bool = False) -> str:
        dim = self.states.shape[1]
        lines = [",".join(['sample_id', 't'] + [f"x{j}" for j in range(dim)])]
        for i, t, row in self._rows(include_trace):
            lines.append(",".join([str(i), repr(float(t))] + [repr(float(v)) for v in row]))
        return "\n".join(lines) + "\n"

    def to_csv(self, path: Union[str, Path], include_trace: bool = False) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv_text(include_trace))
        return path


@dataclass
class _Integrator:
    """Advances every trajectory over one grid interval"""
    config: SamplerConfig
    source: ScoreSource
    handoff: Optional[ScoreSource]
    ts: np.ndarray
    states: np.ndarray

    def _source_for(self, t_to: float) -> ScoreSource:
        t_switch = self.config.t_switch
        if t_switch is not None and self.handoff is not None and t_to < t_switch:
            return self.handoff
        return self.source

    def advance(self, i: int, step: int) -> np.ndarray:
        t_from, t_to = float(self.ts[step]), float(self.ts[step + 1])
        source = self._source_for(t_to)
        z = self.states[i]
        seed = self.config.seed
        rng = derive_rng(seed, _SCORE_STREAM, i, step, 0) if source.stochastic else None
        if self.config.solver is SolverKind.EULER:
            return euler_step(source, z, t_from, t_to, rng)
        rng_end = None
        if source.stochastic:
            stage = 0 if self.config.shared_stage_batch else 1
            rng_end = derive_rng(seed, _SCORE_STREAM, i, step, stage)
        return heun_step(source, z, t_from, t_to, rng, rng_end)


def prior_sample(schedule: DiffusionSchedule, t_max: float, dim: int, seed: int, i: int) -> np.ndarray:
    """Initial state of trajectory i: N(0, (s(T) sigma(T))^2 I)"""
    rng = derive_rng(seed, _PRIOR_STREAM, i)
    return schedule.scale(t_max) * schedule.sigma(t_max) * rng.standard_normal(dim)


def sample(
    data: DatasetStore,
    schedule: DiffusionSchedule,
    config: SamplerConfig,
    workers: int = 1,
    index: Optional[BaseIndex] = None,
    trace: bool = False,
    source: Optional[ScoreSource] = None,
) -> SampleResult:
    """
    Integrate the PF-ODE for `config.n_samples` independent trajectories.

    Args:
        data: Dataset
        schedule: Diffusion schedule
        config: Sampler configuration
        workers: Threads advancing trajectories in parallel
        index: Nearest neighbour index for the KNN source (built if omitted)
        trace: Keep the states at every grid time
        source: Score source overriding `config.score_source`

    Returns:
        SampleResult
    """
    config.validate()
    handoff = None
    switched = config.t_switch is not None and config.handoff is HandoffKind.STOP
    if switched:
        t_end = config.t_switch
    else:
        t_end = config.t_min
    states = np.stack([
        prior_sample(schedule, config.t_max, data.dim, config.seed, i) for i in range(config.n_samples)
    ])
    if t_end == config.t_max:
        # stop at t_switch = t_max: the prior draw is the result
        ts = np.array([config.t_max])
        return SampleResult(ts=ts, states=states, trace=[states.copy()] if trace else None, switched=True)

    ts = time_grid(t_end, config.t_max, config.steps, config.grid, config.rho)
    if config.t_switch is not None and not switched:
        ts = insert_time(ts, config.t_switch)
        handoff = ExactScore(data, schedule)
    if source is None:
        source = build_score_source(config.score_source, data, schedule, config.n, config.k, index)

    history = [states.copy()] if trace else None
    integrator = _Integrator(config, source, handoff, ts, states)
    n_steps = len(ts) - 1
    logger.info(
        f"Sampling {config.n_samples} trajectories: {config.solver.value}, {n_steps} steps, "
        f"t {ts[0]:g} -> {ts[-1]:g}, score {type(source).__name__}"
    )

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for step in range(n_steps):
            if pool is not None:
                rows = list(pool.map(lambda i: integrator.advance(i, step), range(config.n_samples)))
            else:
                rows = [integrator.advance(i, step) for i in range(config.n_samples)]
            integrator.states = np.stack(rows)
            if history is not None:
                history.append(integrator.states.copy())
            if (step + 1) % 10 == 0 or step + 1 == n_steps:
                logger.info(f"Step {step + 1}/{n_steps} done (t={ts[step + 1]:.4g})")
    finally:
        if pool is not None:
            pool.shutdown()

    return SampleResult(ts=ts, states=integrator.states, trace=history, switched=switched)
