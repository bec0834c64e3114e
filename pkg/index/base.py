"""
Base index class and NeighborSet dataclass
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List

import numpy as np

from db.store import DatasetStore
from errors import ArgumentError, DimensionError


@dataclass(frozen=True, eq=False)
class NeighborSet:
    """Ordered k nearest dataset rows of a query"""
    indices: np.ndarray  # (k,) int64, distinct
    dists: np.ndarray  # (k,) float64, L2 distances (not squared), non-decreasing

    @property
    def k(self) -> int:
        return int(self.indices.shape[0])

    @property
    def sq_dists(self) -> np.ndarray:
        """Squared distances, recomputed from the unsquared ones"""
        return self.dists * self.dists

    def __repr__(self):
        return f"<NeighborSet(k={self.k}, nearest={self.dists[0]:.4g}, farthest={self.dists[-1]:.4g})>"


class BaseIndex(ABC):
    """Abstract base class for nearest neighbour indexes over a DatasetStore"""

    def __init__(self, data: DatasetStore, name: str):
        self.data = data
        self.name = name
        self.logger = logging.getLogger(f"index.{name}")

    @abstractmethod
    def search(self, query: np.ndarray, k: int) -> NeighborSet:
        """
        Find the k nearest dataset rows of `query`.
        Must be implemented by subclasses.

        Returns:
            NeighborSet sorted by ascending distance, ties by ascending index
        """
        pass

    def search_batch(self, queries: np.ndarray, k: int) -> List[NeighborSet]:
        """Search several queries one after another"""
        return [self.search(q, k) for q in np.atleast_2d(queries)]

    def validate_query(self, query: np.ndarray, k: int) -> np.ndarray:
        """
        Check a query against the dataset.

        Args:
            query: Query vector
            k: Number of neighbours requested

        Returns:
            The query as a float64 vector
        """
        query = np.asarray(query, dtype=np.float64).reshape(-1)
        if query.shape[0] != self.data.dim:
            raise DimensionError(f"query has dimension {query.shape[0]}, dataset has {self.data.dim}")
        if not 1 <= k <= self.data.n:
            raise ArgumentError(f"k must satisfy 1 <= k <= N={self.data.n}, got {k}")
        return query
