"""
Seeded synthetic datasets (desk-scale stand-ins for image data)
"""
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np

from config import (
    SYNTHETIC_COMPONENTS, SYNTHETIC_DIM, SYNTHETIC_KIND, SYNTHETIC_N,
    SYNTHETIC_SEED, SYNTHETIC_STD,
)
from errors import ConfigError
from .store import DatasetStore


class SyntheticKind(Enum):
    GAUSSIAN_MIXTURE = "gmm"
    UNIFORM_HYPERCUBE = "uniform"
    TWO_MOONS = "moons"


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic dataset"""
    kind: SyntheticKind = SyntheticKind(SYNTHETIC_KIND)
    n: int = SYNTHETIC_N
    dim: int = SYNTHETIC_DIM
    components: int = SYNTHETIC_COMPONENTS
    component_std: float = SYNTHETIC_STD
    seed: int = SYNTHETIC_SEED

    def validate(self):
        if self.n < 1:
            raise ConfigError(f"synthetic n must be >= 1, got {self.n}")
        if self.dim < 1:
            raise ConfigError(f"synthetic dim must be >= 1, got {self.dim}")
        if self.components < 1:
            raise ConfigError(f"components must be >= 1, got {self.components}")
        if not self.component_std > 0.0:
            raise ConfigError(f"component_std must be positive, got {self.component_std}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.kind is SyntheticKind.TWO_MOONS and self.dim != 2:
            raise ConfigError("two moons requires dim = 2")

    @classmethod
    def from_dict(cls, values: dict) -> "SyntheticSpec":
        """Build a spec from the `[dataset]` config section or CLI flags"""
        try:
            spec = cls(
                kind=SyntheticKind(str(values.get("kind", SYNTHETIC_KIND)).lower()),
                n=int(values.get("n", SYNTHETIC_N)),
                dim=int(values.get("dim", SYNTHETIC_DIM)),
                components=int(values.get("components", SYNTHETIC_COMPONENTS)),
                component_std=float(values.get("component_std", SYNTHETIC_STD)),
                seed=int(values.get("seed", SYNTHETIC_SEED)),
            )
        except ValueError as e:
            raise ConfigError(f"bad synthetic dataset spec: {e}")
        spec.validate()
        return spec


def component_means(spec: SyntheticSpec) -> np.ndarray:
    """Mixture means, uniform in [-1, 1]^d from a stream derived from the seed"""
    rng = np.random.default_rng([spec.seed, 1])
    return rng.uniform(-1.0, 1.0, size=(spec.components, spec.dim))


def generate_labeled(spec: SyntheticSpec) -> Tuple[DatasetStore, np.ndarray]:
    """
    Generate a dataset together with per-point component labels.

    Values are rounded through float32 so the dataset round-trips the
    binary format bit for bit.

    Args:
        spec: Synthetic dataset parameters

    Returns:
        Tuple of (DatasetStore, labels); labels are zeros for kinds without components
    """
    spec.validate()
    rng = np.random.default_rng([spec.seed, 0])
    labels = np.zeros(spec.n, dtype=np.int64)

    if spec.kind is SyntheticKind.GAUSSIAN_MIXTURE:
        means = component_means(spec)
        labels = rng.integers(spec.components, size=spec.n)
        points = means[labels] + spec.component_std * rng.standard_normal((spec.n, spec.dim))
    elif spec.kind is SyntheticKind.UNIFORM_HYPERCUBE:
        points = rng.random((spec.n, spec.dim))
    else:
        # Two interleaving half circles
        labels = rng.integers(2, size=spec.n)
        angles = rng.uniform(0.0, np.pi, size=spec.n)
        upper = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        lower = np.stack([1.0 - np.cos(angles), 0.5 - np.sin(angles)], axis=1)
        points = np.where(labels[:, None] == 0, upper, lower)
        points = points + spec.component_std * rng.standard_normal((spec.n, 2))

    points = points.astype(np.float32).astype(np.float64)
    return DatasetStore.from_array(points), labels


def generate(spec: SyntheticSpec) -> DatasetStore:
    """Generate a synthetic dataset (pure function of the spec)"""
    store, _ = generate_labeled(spec)
    return store
