"""
DatasetStore: the finite dataset defining the Dirac-mixture data distribution
"""
import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from errors import DataError


@dataclass(frozen=True, eq=False)
class DatasetStore:
    """Immutable N x d matrix of data points with precomputed squared norms"""
    points: np.ndarray  # (N, d) float64, row-major, read-only
    sq_norms: np.ndarray  # (N,) float64, ||x_i||^2

    @classmethod
    def from_array(cls, points) -> "DatasetStore":
        """
        Build a store from any 2-D array-like.

        Args:
            points: Array-like of shape (N, d)

        Returns:
            DatasetStore with computed squared norms
        """
        matrix = np.array(points, dtype=np.float64, order="C", copy=True)
        if matrix.ndim == 1:
            matrix = matrix.reshape(-1, 1)
        if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
            raise DataError(f"dataset must be a non-empty N x d matrix, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            bad = int(np.argwhere(~np.isfinite(matrix))[0][0])
            raise DataError(f"dataset contains NaN or Inf entries (first in row {bad})")
        sq_norms = np.einsum("ij,ij->i", matrix, matrix)
        matrix.setflags(write=False)
        sq_norms.setflags(write=False)
        return cls(points=matrix, sq_norms=sq_norms)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.n

    def __repr__(self):
        return f"<DatasetStore(n={self.n}, dim={self.dim})>"

    def mean(self) -> np.ndarray:
        """Dataset average"""
        return self.points.mean(axis=0)

    def diameter(self) -> float:
        """Largest pairwise L2 distance (0 for a single point)"""
        if self.n < 2:
            return 0.0
        return float(pdist(self.points).max())

    def min_gap(self) -> float:
        """Smallest non-zero pairwise L2 distance (0 if all points coincide)"""
        if self.n < 2:
            return 0.0
        dists = pdist(self.points)
        dists = dists[dists > 0.0]
        return float(dists.min()) if dists.size else 0.0

    def checksum(self) -> str:
        """SHA-256 of the 32-bit storage representation"""
        digest = hashlib.sha256()
        digest.update(np.array([self.n, self.dim], dtype="<u8").tobytes())
        digest.update(self.points.astype("<f4").tobytes())
        return digest.hexdigest()
