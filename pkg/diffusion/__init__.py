from .schedules import (
    DiffusionSchedule, ScheduleKind, sigma, scale,
    log_forward_likelihood, conditional_score, score_from_mean,
)
from .oracle import (
    ExactPosterior, Target, exact_posterior, exact_posterior_mean, exact_score,
    log_likelihoods, log_marginal, posterior_variance_diag, snis_covariance_diag,
    uniform_trace, uniform_log_probs, optimal_denoiser_check,
)

__all__ = [
    'DiffusionSchedule', 'ScheduleKind', 'sigma', 'scale',
    'log_forward_likelihood', 'conditional_score', 'score_from_mean',
    'ExactPosterior', 'Target', 'exact_posterior', 'exact_posterior_mean', 'exact_score',
    'log_likelihoods', 'log_marginal', 'posterior_variance_diag', 'snis_covariance_diag',
    'uniform_trace', 'uniform_log_probs', 'optimal_denoiser_check',
]
