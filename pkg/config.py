"""
Nearest-Neighbour Score Estimation - Configuration
"""
import configparser
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

from errors import ConfigError

# Base paths
BASE_DIR = Path(__file__).parent
RUNS_DB_ENV = "NNSCORE_RUNS_DB"  # optional SQLite run ledger path

# Logging
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_LEVEL = "INFO"

# Diffusion schedule (EDM convention for the time range)
SCHEDULE_KIND = "edm"
T_MIN = 0.002
T_MAX = 80.0
VP_BETA_D = 19.9  # conventional VP constants
VP_BETA_MIN = 0.1

# Dataset file format
DATASET_MAGIC = b"NNSE"
DATASET_VERSION = 1

# Synthetic dataset defaults
SYNTHETIC_KIND = "gmm"
SYNTHETIC_N = 256
SYNTHETIC_DIM = 8
SYNTHETIC_COMPONENTS = 8
SYNTHETIC_STD = 0.05
SYNTHETIC_SEED = 0

# Nearest neighbour search
KNN_BLOCK_SIZE = 4096  # dataset rows per distance block

# Estimators
DEFAULT_N = 256  # SNIS batch size
DEFAULT_K = 64  # neighbours in the proposal
ESTIMATOR_KINDS = ['exact', 'mc_single', 'mc_posterior', 'uniform', 'stf', 'knn', 'is']
TAIL_REJECTION_WARN = 64  # rejection tries before a warning is logged

# Evaluation protocol (desk scale)
EVAL_POINTS = 500
EVAL_REPS = 50
EVAL_T_LO = 1e-2
EVAL_T_HI = 80.0
EVAL_T_COUNT = 24
EVAL_ESTIMATORS = ['knn', 'uniform', 'stf']
SOFT_VARIANCE_TOL = 0.25

# Bound verification
BOUND_TRIALS = 1000
BOUND_TOLERANCE = 1e-9  # relative
BOUND_FLOOR = 1e-300  # traces below this are subnormal noise

# Sampler
SAMPLER_STEPS = 40
SAMPLER_SOLVER = "heun"
SAMPLER_GRID = "rho"
SAMPLER_RHO = 7.0
SAMPLER_SAMPLES = 1000
SAMPLER_SCORE = "knn"

# Run settings
DEFAULT_SEED = 0
THREADS_ENV = "NNSCORE_THREADS"


def default_threads() -> int:
    """Worker threads: NNSCORE_THREADS if set, else available parallelism"""
    value = os.getenv(THREADS_ENV)
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            pass
    return os.cpu_count() or 1


# Run config file: section -> key -> type. Keys outside this schema are rejected.
CONFIG_SCHEMA = {
    'schedule': {'kind': str, 't_min': float, 't_max': float, 'beta_d': float, 'beta_min': float},
    'dataset': {
        'path': str, 'kind': str, 'n': int, 'dim': int, 'components': int,
        'component_std': float, 'seed': int,
    },
    'estimators': {'names': list, 'n': int, 'k': int, 'n_grid': list, 'k_grid': list},
    'protocol': {'t_lo': float, 't_hi': float, 't_count': int, 'points': int, 'reps': int},
    'bounds': {'trials': int, 'theorem': int, 'k': int, 'n': int},
    'sampler': {
        'steps': int, 'solver': str, 'score_source': str, 'n': int, 'k': int,
        't_min': float, 't_max': float, 't_switch': float, 'handoff': str,
        'n_samples': int, 'grid': str, 'rho': float, 'shared_stage_batch': bool,
    },
    'run': {'seed': int, 'threads': int, 'runs_db': str, 'log_level': str},
}


class RunConfig:
    """
    Values read from an INI run file, typed against CONFIG_SCHEMA.

    Only keys present in the file are stored; callers fall back to the
    module constants above. Command line flags override both.
    """

    def __init__(self, sections: Optional[Dict[str, Dict[str, Any]]] = None, source: Optional[Path] = None):
        self.sections = sections or {}
        self.source = source

    def __repr__(self):
        return f"<RunConfig(source={self.source}, sections={sorted(self.sections)})>"

    def get(self, section: str, key: str, default: Any = None) -> Any:
        return self.sections.get(section, {}).get(key, default)

    def section(self, name: str) -> Dict[str, Any]:
        return dict(self.sections.get(name, {}))

    @classmethod
    def from_text(cls, text: str, source: Optional[Path] = None) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text, source=str(source or "<string>"))
        except configparser.Error as e:
            raise ConfigError(f"cannot parse config: {e}")

        sections = {}
        for name in parser.sections():
            schema = CONFIG_SCHEMA.get(name)
            if schema is None:
                raise ConfigError(f"unknown config section [{name}]")
            values = {}
            for key, raw in parser.items(name):
                kind = schema.get(key)
                if kind is None:
                    raise ConfigError(f"unknown key {key!r} in [{name}]")
                try:
                    if kind is bool:
                        values[key] = parser.getboolean(name, key)
                    elif kind is list:
                        values[key] = [item.strip() for item in raw.split(",") if item.strip()]
                    else:
                        values[key] = kind(raw.strip())
                except ValueError:
                    raise ConfigError(f"bad value for {name}.{key}: {raw!r}")
            sections[name] = values
        return cls(sections, source)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        return cls.from_text(text, path)
