"""
Shared fixtures: schedules and small datasets
"""
import numpy as np
import pytest

from db import DatasetStore, SyntheticSpec, SyntheticKind, generate
from diffusion.schedules import DiffusionSchedule, ScheduleKind
from index.exact import build


@pytest.fixture
def edm():
    return DiffusionSchedule()


@pytest.fixture
def vp():
    return DiffusionSchedule(kind=ScheduleKind.VP, t_min=1e-3, t_max=1.0)


@pytest.fixture
def pair():
    """D = {-1, +1} in one dimension"""
    return DatasetStore.from_array([[-1.0], [1.0]])


@pytest.fixture
def zero_two():
    """D = {0, 2} in one dimension"""
    return DatasetStore.from_array([[0.0], [2.0]])


@pytest.fixture
def line3():
    """D = {0, 1, 5} in one dimension"""
    return DatasetStore.from_array([[0.0], [1.0], [5.0]])


@pytest.fixture
def gmm64():
    return generate(SyntheticSpec(kind=SyntheticKind.GAUSSIAN_MIXTURE, n=64, dim=8, components=4, seed=3))


@pytest.fixture
def gmm256():
    return generate(SyntheticSpec(kind=SyntheticKind.GAUSSIAN_MIXTURE, n=256, dim=8, components=8, seed=11))


@pytest.fixture
def gmm256_index(gmm256):
    return build(gmm256)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def gmm64_index(gmm64):
    return build(gmm64)
