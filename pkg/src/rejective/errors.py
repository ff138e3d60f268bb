"""Exception hierarchy used across the package."""

from __future__ import annotations


class RejectiveError(Exception):
    """Base class for all package errors."""


class ConfigurationError(RejectiveError, ValueError):
    """Invalid parameters or configuration values."""


class SchemaError(ConfigurationError):
    """A requested column is missing from an input frame."""


class ParseError(ConfigurationError):
    """A cell in an input frame could not be parsed as a finite number."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class DegeneratePopulationError(RejectiveError):
    """Population too small or degenerate for the requested quantity."""


class DesignError(RejectiveError):
    """Invalid sampling-design parameters."""


class SingularNormalizerError(RejectiveError):
    """Balance normalizer is not positive definite."""

    def __init__(self, message: str, min_pivot: float = float("nan")):
        super().__init__(message)
        self.min_pivot = min_pivot


class ZeroVarianceError(RejectiveError):
    """The balance criterion is undefined because the design variance is zero."""


class AcceptanceFailure(RejectiveError):
    """Rejection loop hit its attempt cap."""

    def __init__(self, message: str, attempts: int = 0, accepted_rate: float = 0.0):
        super().__init__(message)
        self.attempts = attempts
        self.accepted_rate = accepted_rate


class CollinearityError(RejectiveError):
    """Weighted Gram matrix or tier block is singular."""

    def __init__(self, message: str, tier: int | None = None):
        super().__init__(message)
        self.tier = tier


class EstimationError(RejectiveError):
    """Estimator undefined on the given sample (empty sample, unobserved y, ...)."""


class InsufficientDataError(EstimationError):
    """Sample too small for the number of parameters."""


class CapabilityError(RejectiveError):
    """A design lacks a required capability, such as joint inclusion probabilities."""


class SolverError(RejectiveError):
    """Root finder failed to converge."""

    def __init__(self, message: str, trace: list | None = None):
        super().__init__(message)
        self.trace = trace or []


class NonIdentificationError(RejectiveError):
    """Estimating-equation Jacobian is singular."""


class DegenerateDistributionError(RejectiveError):
    """Mixture with all-zero scales."""


class SizeError(RejectiveError):
    """Enumeration budget exceeded."""


class RunFailure(RejectiveError):
    """Too many replicates of a Monte Carlo run raised errors."""

    def __init__(self, message: str, n_failed: int = 0, n_total: int = 0):
        super().__init__(message)
        self.n_failed = n_failed
        self.n_total = n_total
