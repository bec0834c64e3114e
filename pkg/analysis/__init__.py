from .evaluation import EvalProtocol, EstimatorReport, ReportRow, REPORT_HEADER, log_t_grid, run_eval
from .bounds import (
    BoundReport, BoundRow, BoundTerms, BOUND_HEADER, evaluate_bounds, trial_point,
    verify_theorem1, verify_theorem2,
)
from .statistics import convergence_order, energy_distance, energy_test, standard_error

__all__ = [
    'EvalProtocol', 'EstimatorReport', 'ReportRow', 'REPORT_HEADER', 'log_t_grid', 'run_eval',
    'BoundReport', 'BoundRow', 'BoundTerms', 'BOUND_HEADER', 'evaluate_bounds', 'trial_point',
    'verify_theorem1', 'verify_theorem2',
    'convergence_order', 'energy_distance', 'energy_test', 'standard_error',
]
