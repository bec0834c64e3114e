from .base import BaseIndex, NeighborSet
from .exact import ExactL2Index, build, search, naive_search, validate_against_naive

__all__ = [
    'BaseIndex', 'NeighborSet',
    'ExactL2Index', 'build', 'search', 'naive_search', 'validate_against_naive',
]
