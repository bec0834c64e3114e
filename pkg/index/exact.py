"""
Exact L2 nearest neighbour search

Squared distances are computed blockwise with the expansion
||z - x||^2 = ||z||^2 - 2 z.x + ||x||^2 using the dataset's precomputed
norms. Each block contributes every row that ties with its k-th smallest
value, and a running candidate set is reduced with a (distance, index)
lexicographic sort, so ties resolve by ascending dataset index no matter
how the dataset is blocked. Distances of the selected rows are then
recomputed directly, which keeps a query equal to a dataset row at
distance exactly 0.
"""
import time
from typing import Tuple

import numpy as np

from config import KNN_BLOCK_SIZE
from db.store import DatasetStore
from errors import ArgumentError
from .base import BaseIndex, NeighborSet


class ExactL2Index(BaseIndex):
    """Brute-force exact k-NN over an immutable DatasetStore"""

    def __init__(self, data: DatasetStore, block_size: int = KNN_BLOCK_SIZE):
        super().__init__(data, "exact_l2")
        if block_size < 1:
            raise ArgumentError(f"block_size must be >= 1, got {block_size}")
        self.block_size = int(block_size)

    def __repr__(self):
        return f"<ExactL2Index(n={self.data.n}, dim={self.data.dim}, block_size={self.block_size})>"

    @staticmethod
    def _within_kth(sq: np.ndarray, k: int, slack: float) -> np.ndarray:
        # rows no farther than the k-th smallest value plus rounding slack
        if sq.shape[0] <= k:
            return np.arange(sq.shape[0])
        kth = np.partition(sq, k - 1)[k - 1]
        return np.flatnonzero(sq <= kth + slack)

    def _block_candidates(self, query: np.ndarray, q_norm: float, start: int, k: int, slack: float) -> Tuple[np.ndarray, np.ndarray]:
        stop = min(start + self.block_size, self.data.n)
        block = self.data.points[start:stop]
        sq = q_norm - 2.0 * (block @ query) + self.data.sq_norms[start:stop]
        np.maximum(sq, 0.0, out=sq)
        keep = self._within_kth(sq, k, slack)
        return keep + start, sq[keep]

    def search(self, query: np.ndarray, k: int) -> NeighborSet:
        query = self.validate_query(query, k)
        q_norm = float(query @ query)
        # the expansion loses up to a few ulps of ||z||^2 + ||x||^2
        slack = 1e-12 * (q_norm + float(self.data.sq_norms.max()))

        cand_idx = np.empty(0, dtype=np.int64)
        cand_sq = np.empty(0, dtype=np.float64)
        for start in range(0, self.data.n, self.block_size):
            idx, sq = self._block_candidates(query, q_norm, start, k, slack)
            cand_idx = np.concatenate([cand_idx, idx])
            cand_sq = np.concatenate([cand_sq, sq])
            keep = self._within_kth(cand_sq, k, slack)
            cand_idx, cand_sq = cand_idx[keep], cand_sq[keep]

        diff = self.data.points[cand_idx] - query
        dists = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        order = np.lexsort((cand_idx, dists))[:k]
        return NeighborSet(indices=cand_idx[order].astype(np.int64), dists=dists[order])


def build(data: DatasetStore, block_size: int = KNN_BLOCK_SIZE) -> ExactL2Index:
    """Build an exact index over `data`"""
    return ExactL2Index(data, block_size=block_size)


def search(index: BaseIndex, query: np.ndarray, k: int) -> NeighborSet:
    return index.search(query, k)


def naive_search(data: DatasetStore, query: np.ndarray, k: int) -> NeighborSet:
    """
    Reference full scan: direct distances to every row, full sort.

    Args:
        data: Dataset
        query: Query vector
        k: Number of neighbours

    Returns:
        NeighborSet sorted by (distance, index)
    """
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    diff = data.points - query
    dists = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    order = np.lexsort((np.arange(data.n), dists))[:k]
    return NeighborSet(indices=order.astype(np.int64), dists=dists[order])


def validate_against_naive(index: BaseIndex, queries: np.ndarray, k: int) -> dict:
    """
    Compare index search with the naive scan and time it.

    Args:
        index: Index under test
        queries: (Q, d) query matrix
        k: Neighbours per query

    Returns:
        Dict with mismatches, queries and queries_per_sec
    """
    queries = np.atleast_2d(queries)
    start = time.perf_counter()
    results = index.search_batch(queries, k)
    elapsed = time.perf_counter() - start

    mismatches = 0
    for query, got in zip(queries, results):
        expected = naive_search(index.data, query, k)
        same_idx = np.array_equal(got.indices, expected.indices)
        same_dist = np.allclose(got.dists, expected.dists, rtol=1e-9, atol=0.0)
        if not (same_idx and same_dist):
            mismatches += 1
            index.logger.warning(f"Mismatch for query {query[:4]}...: {got.indices[:5]} vs {expected.indices[:5]}")

    return {
        'queries': len(queries),
        'mismatches': mismatches,
        'queries_per_sec': len(queries) / elapsed if elapsed > 0 else float('inf'),
    }
