from typing import Optional

from db.store import DatasetStore
from diffusion.schedules import DiffusionSchedule
from index.base import BaseIndex
from index.exact import build as build_index

from .base import (
    BaseEstimator, EstimatorKind, EstimatorSpec, ScoreEstimate, expand_specs, make_estimate, weighted_mean,
)
from .proposals import (
    BaseProposal, KnnProposal, UniformProposal, build_knn_proposal, proposal_divergence,
)
from .snis import (
    ImportanceEstimator, KnnSNISEstimator, STFEstimator, UniformSNISEstimator,
    importance_estimate, snis_estimate, stf_estimate,
)
from .monte_carlo import (
    ExactEstimator, PosteriorMCEstimator, SingleSampleEstimator,
    draw_posterior, mc_posterior, mc_single,
)

ESTIMATOR_CLASSES = {
    EstimatorKind.EXACT: ExactEstimator,
    EstimatorKind.MC_SINGLE: SingleSampleEstimator,
    EstimatorKind.MC_POSTERIOR: PosteriorMCEstimator,
    EstimatorKind.UNIFORM: UniformSNISEstimator,
    EstimatorKind.STF: STFEstimator,
    EstimatorKind.KNN: KnnSNISEstimator,
    EstimatorKind.IS: ImportanceEstimator,
}


def build_estimator(
    spec: EstimatorSpec,
    data: DatasetStore,
    schedule: DiffusionSchedule,
    index: Optional[BaseIndex] = None,
) -> BaseEstimator:
    """
    Instantiate the estimator described by `spec`.

    Args:
        spec: Estimator kind, n and k
        data: Dataset
        schedule: Diffusion schedule
        index: Nearest neighbour index (built on demand for knn/is)

    Returns:
        BaseEstimator
    """
    cls = ESTIMATOR_CLASSES[spec.kind]
    if spec.uses_neighbours:
        return cls(data, schedule, spec, index if index is not None else build_index(data))
    return cls(data, schedule, spec)


__all__ = [
    'BaseEstimator', 'EstimatorKind', 'EstimatorSpec', 'ScoreEstimate', 'expand_specs', 'make_estimate', 'weighted_mean',
    'BaseProposal', 'KnnProposal', 'UniformProposal', 'build_knn_proposal', 'proposal_divergence',
    'ImportanceEstimator', 'KnnSNISEstimator', 'STFEstimator', 'UniformSNISEstimator',
    'importance_estimate', 'snis_estimate', 'stf_estimate',
    'ExactEstimator', 'PosteriorMCEstimator', 'SingleSampleEstimator',
    'draw_posterior', 'mc_posterior', 'mc_single',
    'ESTIMATOR_CLASSES', 'build_estimator',
]
