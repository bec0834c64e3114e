"""
Exception hierarchy shared by every package
"""
from typing import Optional


class NNScoreError(Exception):
    """Base class for all errors raised by the score estimation toolkit"""


class DomainError(NNScoreError, ValueError):
    """A value lies outside the domain of a function (e.g. t <= 0)"""


class DimensionError(NNScoreError, ValueError):
    """Vector dimensions do not agree"""


class ArgumentError(NNScoreError, ValueError):
    """An argument is out of its allowed range (e.g. k > N, n = 0)"""


class ConfigError(NNScoreError, ValueError):
    """Invalid configuration file, flag or synthetic spec"""


class DataError(NNScoreError, ValueError):
    """Dataset content is unusable (NaN/Inf entries, empty matrix)"""


class DatasetFormatError(NNScoreError, ValueError):
    """A dataset file does not follow the binary or CSV format"""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class UnsupportedProposalError(NNScoreError, ValueError):
    """Proposal assigns zero mass where the posterior does not (infinite variance)"""


class EvaluationError(NNScoreError):
    """An estimator failed inside the evaluation harness"""

    def __init__(self, message: str, t: float, point: int):
        self.t = t
        self.point = point
        super().__init__(f"t={t:g}, point={point}: {message}")


def check_time(t: float) -> float:
    """
    Validate a diffusion time.

    Args:
        t: Diffusion time

    Returns:
        t as a float
    """
    t = float(t)
    if not t > 0.0:
        raise DomainError(f"diffusion time must be positive, got {t}")
    return t
